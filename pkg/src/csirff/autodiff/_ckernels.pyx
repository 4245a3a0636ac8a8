# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: im2col/col2im for the convolutions and exact GELU."""
import numpy as np
cimport cython

ctypedef fused real:
    float
    double


def _im2col(real[:, :, :, ::1] xp, int kh, int kw, real[:, ::1] cols):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t ho = hp - kh + 1, wo = wp - kw + 1
    cdef Py_ssize_t ci, i, j, b, y, x, row, col
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    col = 0
                    for b in range(n):
                        for y in range(ho):
                            for x in range(wo):
                                cols[row, col] = xp[b, ci, y + i, x + j]
                                col += 1


def _col2im(real[:, ::1] cols, int kh, int kw, real[:, :, :, ::1] out):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1], hp = out.shape[2], wp = out.shape[3]
    cdef Py_ssize_t ho = hp - kh + 1, wo = wp - kw + 1
    cdef Py_ssize_t ci, i, j, b, y, x, row, col
    with nogil:
        for ci in range(c):
            for i in range(kh):
                for j in range(kw):
                    row = (ci * kh + i) * kw + j
                    col = 0
                    for b in range(n):
                        for y in range(ho):
                            for x in range(wo):
                                out[b, ci, y + i, x + j] += cols[row, col]
                                col += 1


def im2col(xp, int kh, int kw):
    xp = np.ascontiguousarray(xp)
    n, c, hp, wp = xp.shape
    cols = np.empty((c * kh * kw, n * (hp - kh + 1) * (wp - kw + 1)), dtype=xp.dtype)
    _im2col(xp, kh, kw, cols)
    return cols


def col2im(cols, shape, int kh, int kw):
    cols = np.ascontiguousarray(cols)
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im(cols, kh, kw, out)
    return out


cdef extern from "math.h" nogil:
    double erf(double)
    float erff(float)
    double exp(double)
    float expf(float)


def _gelu_fwd(real[::1] x, real[::1] y, real[::1] cdf):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef real c
    with nogil:
        for i in range(n):
            if real is float:
                c = 0.5 * (1.0 + erff(x[i] * 0.70710678118654752))
            else:
                c = 0.5 * (1.0 + erf(x[i] * 0.70710678118654752))
            cdf[i] = c
            y[i] = x[i] * c


def _gelu_bwd(real[::1] x, real[::1] cdf, real[::1] g, real[::1] out):
    cdef Py_ssize_t i, n = x.shape[0]
    cdef real pdf
    with nogil:
        for i in range(n):
            if real is float:
                pdf = expf(-0.5 * x[i] * x[i]) * 0.3989422804014327
            else:
                pdf = exp(-0.5 * x[i] * x[i]) * 0.3989422804014327
            out[i] = g[i] * (cdf[i] + x[i] * pdf)


def gelu_forward(x):
    """Return ``(x * Phi(x), Phi(x))``."""
    x = np.ascontiguousarray(x)
    y = np.empty_like(x)
    cdf = np.empty_like(x)
    _gelu_fwd(x.reshape(-1), y.reshape(-1), cdf.reshape(-1))
    return y, cdf


def gelu_backward(x, cdf, g):
    x = np.ascontiguousarray(x)
    g = np.ascontiguousarray(g, dtype=x.dtype)
    out = np.empty_like(x)
    _gelu_bwd(x.reshape(-1), np.ascontiguousarray(cdf).reshape(-1), g.reshape(-1), out.reshape(-1))
    return out
