"""Network layer primitives: forward passes with explicit backward adjoints.

All functions are pure; forwards return ``(output, cache)`` and the matching
backward consumes the cache. Tensors are batched ``(N, C, H, W)`` or ``(N, D)``
arrays in the caller's dtype (float64 for gradient-checked training, float32
optionally for speed).
"""

from __future__ import annotations

import numpy as np


# --------------------------------------------------------------------------
# 3x3 convolution, stride 1, same padding


def _im2col3(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C*9, H*W) patch matrix for a padded 3x3 window."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h * w), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            cols[:, :, ky * 3 + kx] = xp[:, :, ky:ky + h, kx:kx + w].reshape(n, c, h * w)
    return cols.reshape(n, c * 9, h * w)


def conv3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """y[n,f] = sum_c w[f,c] * x[n,c] (3x3 window) + b[f]; output keeps H, W."""
    n, c, h, width = x.shape
    f = w.shape[0]
    cols = _im2col3(x)
    y = np.matmul(w.reshape(f, c * 9), cols) + b[:, None]
    return y.reshape(n, f, h, width), (x, w)


def conv3_backward(dy: np.ndarray, cache):
    x, w = cache
    n, c, h, width = x.shape
    f = w.shape[0]
    dyf = dy.reshape(n, f, h * width)
    db = dyf.sum(axis=(0, 2))
    cols = _im2col3(x)
    dw = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    dcols = np.matmul(w.reshape(f, c * 9).T, dyf)  # (N, C*9, H*W)
    dcols = dcols.reshape(n, c, 9, h, width)
    dxp = np.zeros((n, c, h + 2, width + 2), dtype=dy.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, :, ky:ky + h, kx:kx + width] += dcols[:, :, ky * 3 + kx]
    return dxp[:, :, 1:-1, 1:-1], dw, db


# --------------------------------------------------------------------------
# 2x2 max pooling, stride 2, floor on odd dims


def maxpool2_forward(x: np.ndarray):
    """Max over 2x2 windows; a trailing odd row/column is dropped (floor).

    The cache records, per window, the argmax in row-major window order;
    numpy's argmax takes the first maximal element, which fixes tie-breaking.
    """
    n, c, h, w = x.shape
    oh, ow = h // 2, w // 2
    if oh < 1 or ow < 1:
        raise ValueError(f"maxpool needs dims >= 2, got {h}x{w}")
    win = (
        x[:, :, : 2 * oh, : 2 * ow]
        .reshape(n, c, oh, 2, ow, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, oh, ow, 4)
    )
    arg = win.argmax(axis=4)
    y = win.max(axis=4)
    return y, (x.shape, arg)


def maxpool2_backward(dy: np.ndarray, cache):
    (n, c, h, w), arg = cache
    oh, ow = h // 2, w // 2
    dwin = np.zeros((n, c, oh, ow, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=4)
    dx = np.zeros((n, c, h, w), dtype=dy.dtype)
    dx[:, :, : 2 * oh, : 2 * ow] = (
        dwin.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * oh, 2 * ow)
    )
    return dx


# --------------------------------------------------------------------------
# ReLU and dense


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x > 0


def relu_backward(dy: np.ndarray, mask: np.ndarray):
    return dy * mask


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def dense_backward(dy: np.ndarray, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


# --------------------------------------------------------------------------
# Softmax and cross-entropy


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, label: int):
    """Loss and logit gradient for a single sample, log-sum-exp stabilized.

    grad = softmax(logits) - onehot(label).
    """
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max()
    lse = np.log(np.exp(z).sum())
    loss = float(lse - z[label])
    grad = softmax(logits)
    grad[label] -= 1.0
    return loss, grad


def softmax_cross_entropy_batch(logits: np.ndarray, labels: np.ndarray):
    """Mean loss over the batch and the matching logit gradient (already / N)."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float((lse - z[np.arange(n), labels]).mean())
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
