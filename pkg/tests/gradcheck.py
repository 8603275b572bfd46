"""Shim: the finite-difference oracle lives in f2cskel.fdcheck."""

from f2cskel.fdcheck import full_network_fd_check, random_params

__all__ = ["full_network_fd_check", "random_params"]
