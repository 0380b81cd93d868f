"""Strided 2-D convolution and its transpose on NCHW batches, with gradients.

Both layers use square kernels with symmetric zero padding.  The transposed
convolution is the adjoint of the convolution with the same geometry, so the
two share the im2col / col2im helpers below.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def deconv_out_size(n: int, k: int, stride: int, pad: int, output_padding: int = 0) -> int:
    return (n - 1) * stride - 2 * pad + k + output_padding


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """(B, C, H, W) -> columns (B, C*k*k, Ho*Wo)."""
    B, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * k * k, Ho * Wo)
    return cols, Ho, Wo


def col2im(cols: np.ndarray, shape: tuple[int, int, int, int], k: int, stride: int, pad: int,
           Ho: int, Wo: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back onto a (B, C, H, W) image."""
    B, C, H, W = shape
    out = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    c6 = cols.reshape(B, C, k, k, Ho, Wo)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride] += c6[:, :, i, j]
    if pad:
        out = out[:, :, pad : pad + H, pad : pad + W]
    return np.ascontiguousarray(out)


def conv2d_forward(x, w, b, stride=2, pad=1):
    """``w`` has shape (Cout, Cin, k, k).  Returns (y, cache)."""
    Cout, Cin, k, _ = w.shape
    cols, Ho, Wo = im2col(x, k, stride, pad)
    y = np.matmul(w.reshape(Cout, -1), cols) + b[None, :, None]
    return y.reshape(x.shape[0], Cout, Ho, Wo), (x.shape, cols, Ho, Wo)


def conv2d_backward(dy, w, cache, stride=2, pad=1, need_dx=True):
    xshape, cols, Ho, Wo = cache
    Cout = w.shape[0]
    k = w.shape[2]
    dy2 = dy.reshape(dy.shape[0], Cout, Ho * Wo)
    dw = np.tensordot(dy2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = dy2.sum(axis=(0, 2))
    dx = None
    if need_dx:
        dcols = np.matmul(w.reshape(Cout, -1).T, dy2)
        dx = col2im(dcols, xshape, k, stride, pad, Ho, Wo)
    return dx, dw, db


def conv_transpose2d_forward(x, w, b, out_hw, stride=2, pad=1):
    """``w`` has shape (Cin, Cout, k, k); ``out_hw`` fixes the output size."""
    Cin, Cout, k, _ = w.shape
    B, _, H, W = x.shape
    Ho, Wo = out_hw
    if conv_out_size(Ho, k, stride, pad) != H or conv_out_size(Wo, k, stride, pad) != W:
        raise ValueError(f"output size {out_hw} is not reachable from input {(H, W)}")
    x2 = x.reshape(B, Cin, H * W)
    cols = np.matmul(w.reshape(Cin, -1).T, x2)
    y = col2im(cols, (B, Cout, Ho, Wo), k, stride, pad, H, W) + b[None, :, None, None]
    return y, (x2, (H, W))


def conv_transpose2d_backward(dy, w, cache, stride=2, pad=1, need_dx=True):
    x2, (H, W) = cache
    Cin, Cout, k, _ = w.shape
    dcols, _, _ = im2col(dy, k, stride, pad)
    dw = np.tensordot(x2, dcols, axes=([0, 2], [0, 2])).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    dx = None
    if need_dx:
        dx = np.matmul(w.reshape(Cin, -1), dcols).reshape(dy.shape[0], Cin, H, W)
    return dx, dw, db
