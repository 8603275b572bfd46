"""Skeleton-sequence action recognition with a fine-to-coarse slice-fusion CNN.

The pipeline: parse skeleton datasets into sequences, extract whole-body and
body-part geometric features, encode them as RGB skeleton images, and train a
hierarchical slice-fusion convolutional network implemented from scratch on
top of numpy.
"""

__version__ = "0.1.0"
