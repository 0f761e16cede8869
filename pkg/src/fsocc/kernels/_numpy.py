"""Pure-numpy implementations of the hot array kernels.

Reference backend: always available, vectorized through BLAS-backed matmul
and slice arithmetic. The numba backend must agree with these up to
floating-point accumulation order.
"""

import numpy as np


def conv2d_forward(x, w, b):
    """Same-padded stride-1 convolution. x (n,h,w,ci), w (kh,kw,ci,co), b (co,)."""
    n, h, wd, _ = x.shape
    kh, kw, ci, co = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((n, h + 2 * ph, wd + 2 * pw, ci), dtype=x.dtype)
    xp[:, ph:ph + h, pw:pw + wd, :] = x
    out = np.zeros((n, h, wd, co), dtype=x.dtype)
    for dy in range(kh):
        for dx in range(kw):
            out += xp[:, dy:dy + h, dx:dx + wd, :] @ w[dy, dx]
    return out + b


def conv2d_backward(grad_out, x, w):
    """Gradients of conv2d_forward w.r.t. input and weights.

    Returns (grad_x, grad_w, grad_b).
    """
    n, h, wd, _ = x.shape
    kh, kw, ci, co = w.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((n, h + 2 * ph, wd + 2 * pw, ci), dtype=x.dtype)
    xp[:, ph:ph + h, pw:pw + wd, :] = x
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(w)
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[:, dy:dy + h, dx:dx + wd, :]
            grad_w[dy, dx] = np.tensordot(patch, grad_out, axes=([0, 1, 2], [0, 1, 2]))
            grad_xp[:, dy:dy + h, dx:dx + wd, :] += grad_out @ w[dy, dx].T
    grad_x = grad_xp[:, ph:ph + h, pw:pw + wd, :]
    grad_b = grad_out.sum(axis=(0, 1, 2))
    return grad_x, grad_w, grad_b


def maxpool2x2_forward(x):
    """2x2 max pooling with floor division; odd trailing rows/cols are dropped.

    Returns (out, argmax) where argmax holds the winning offset 0..3
    (row-major within each window; ties keep the first).
    """
    n, h, wd, c = x.shape
    h2, w2 = h // 2, wd // 2
    xc = x[:, :2 * h2, :2 * w2, :]
    windows = (
        xc.reshape(n, h2, 2, w2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, h2, w2, 4, c)
    )
    argmax = windows.argmax(axis=3)
    out = np.take_along_axis(windows, argmax[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return out, argmax


def maxpool2x2_backward(grad_out, argmax, x_shape):
    """Scatter pooled gradients back to the argmax positions."""
    n, h, wd, c = x_shape
    h2, w2 = h // 2, wd // 2
    grad_windows = np.zeros((n, h2, w2, 4, c), dtype=grad_out.dtype)
    np.put_along_axis(grad_windows, argmax[:, :, :, None, :], grad_out[:, :, :, None, :], axis=3)
    grad_xc = (
        grad_windows.reshape(n, h2, w2, 2, 2, c)
        .transpose(0, 1, 3, 2, 4, 5)
        .reshape(n, 2 * h2, 2 * w2, c)
    )
    grad_x = np.zeros(x_shape, dtype=grad_out.dtype)
    grad_x[:, :2 * h2, :2 * w2, :] = grad_xc
    return grad_x
