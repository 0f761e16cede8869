"""Numba-jitted implementations of the hot array kernels.

Loop nests mirror the numpy backend exactly, including the row-major
tie-breaking order in max pooling, so the two backends are interchangeable
up to floating-point accumulation order.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv2d_forward(x, w, b):
    n, h, wd, cin = x.shape
    kh, kw, _, co = w.shape
    ph, pw = kh // 2, kw // 2
    out = np.empty((n, h, wd, co), dtype=x.dtype)
    for im in range(n):
        for y in range(h):
            for xx in range(wd):
                for f in range(co):
                    out[im, y, xx, f] = b[f]
        for dy in range(kh):
            ylo = max(0, ph - dy)
            yhi = min(h, h + ph - dy)
            for dx in range(kw):
                xlo = max(0, pw - dx)
                xhi = min(wd, wd + pw - dx)
                for y in range(ylo, yhi):
                    ys = y + dy - ph
                    for xx in range(xlo, xhi):
                        xs = xx + dx - pw
                        for ci in range(cin):
                            v = x[im, ys, xs, ci]
                            for f in range(co):
                                out[im, y, xx, f] += v * w[dy, dx, ci, f]
    return out


@njit(cache=True)
def conv2d_backward(grad_out, x, w):
    n, h, wd, cin = x.shape
    kh, kw, _, co = w.shape
    ph, pw = kh // 2, kw // 2
    grad_x = np.zeros_like(x)
    grad_w = np.zeros_like(w)
    grad_b = np.zeros(co, dtype=x.dtype)
    for im in range(n):
        for y in range(h):
            for xx in range(wd):
                for f in range(co):
                    grad_b[f] += grad_out[im, y, xx, f]
        for dy in range(kh):
            ylo = max(0, ph - dy)
            yhi = min(h, h + ph - dy)
            for dx in range(kw):
                xlo = max(0, pw - dx)
                xhi = min(wd, wd + pw - dx)
                for y in range(ylo, yhi):
                    ys = y + dy - ph
                    for xx in range(xlo, xhi):
                        xs = xx + dx - pw
                        for ci in range(cin):
                            v = x[im, ys, xs, ci]
                            acc = 0.0
                            for f in range(co):
                                g = grad_out[im, y, xx, f]
                                grad_w[dy, dx, ci, f] += v * g
                                acc += g * w[dy, dx, ci, f]
                            grad_x[im, ys, xs, ci] += acc
    return grad_x, grad_w, grad_b


@njit(cache=True)
def maxpool2x2_forward(x):
    n, h, wd, c = x.shape
    h2, w2 = h // 2, wd // 2
    out = np.empty((n, h2, w2, c), dtype=x.dtype)
    argmax = np.zeros((n, h2, w2, c), dtype=np.int64)
    for im in range(n):
        for y in range(h2):
            for xx in range(w2):
                for ch in range(c):
                    best = x[im, 2 * y, 2 * xx, ch]
                    best_k = 0
                    for k in range(1, 4):
                        v = x[im, 2 * y + k // 2, 2 * xx + k % 2, ch]
                        if v > best:
                            best = v
                            best_k = k
                    out[im, y, xx, ch] = best
                    argmax[im, y, xx, ch] = best_k
    return out, argmax


@njit(cache=True)
def _maxpool2x2_backward(grad_out, argmax, n, h, wd, c):
    h2, w2 = h // 2, wd // 2
    grad_x = np.zeros((n, h, wd, c), dtype=grad_out.dtype)
    for im in range(n):
        for y in range(h2):
            for xx in range(w2):
                for ch in range(c):
                    k = argmax[im, y, xx, ch]
                    grad_x[im, 2 * y + k // 2, 2 * xx + k % 2, ch] = grad_out[im, y, xx, ch]
    return grad_x


def maxpool2x2_backward(grad_out, argmax, x_shape):
    n, h, wd, c = x_shape
    return _maxpool2x2_backward(grad_out, argmax, n, h, wd, c)
