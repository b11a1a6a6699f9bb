# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled im2col / col2im / min-filter kernels.

Drop-in replacements for the functions in ``_pykernels``.
"""

import numpy as np
cimport cython


def conv_output_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride,
                     Py_ssize_t padding, Py_ssize_t dilation):
    return (size + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def im2col(x, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
           Py_ssize_t padding, Py_ssize_t dilation):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.empty((n, c * kh * kw, ho * wo), dtype=np.float64)
    cdef double[:, :, ::1] ov = out
    cdef Py_ssize_t b, ch, ki, kj, oi, oj, ii, jj, row, p
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ch * kh + ki) * kw + kj
                        p = 0
                        for oi in range(ho):
                            ii = oi * stride - padding + ki * dilation
                            if ii < 0 or ii >= h:
                                for oj in range(wo):
                                    ov[b, row, p] = 0.0
                                    p += 1
                                continue
                            for oj in range(wo):
                                jj = oj * stride - padding + kj * dilation
                                if jj < 0 or jj >= w:
                                    ov[b, row, p] = 0.0
                                else:
                                    ov[b, row, p] = xv[b, ch, ii, jj]
                                p += 1
    return out


def col2im(cols, x_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
           Py_ssize_t padding, Py_ssize_t dilation):
    cdef Py_ssize_t n = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t ho = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    cdef const double[:, :, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(
        n, c * kh * kw, ho * wo)
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] xv = out
    cdef Py_ssize_t b, ch, ki, kj, oi, oj, ii, jj, row, p
    with nogil:
        for b in range(n):
            for ch in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ch * kh + ki) * kw + kj
                        for oi in range(ho):
                            ii = oi * stride - padding + ki * dilation
                            if ii < 0 or ii >= h:
                                continue
                            p = oi * wo
                            for oj in range(wo):
                                jj = oj * stride - padding + kj * dilation
                                if jj >= 0 and jj < w:
                                    xv[b, ch, ii, jj] += cv[b, row, p + oj]
    return out


def min_filter2d(img, Py_ssize_t size):
    cdef const double[:, ::1] src = np.ascontiguousarray(img, dtype=np.float64)
    cdef Py_ssize_t h = src.shape[0], w = src.shape[1], r = size // 2
    tmp = np.empty((h, w), dtype=np.float64)
    out = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] tv = tmp
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, k, jj, ii
    cdef double m, v
    with nogil:
        for i in range(h):
            for j in range(w):
                m = src[i, j]
                for k in range(-r, r + 1):
                    jj = j + k
                    if jj < 0:
                        jj = 0
                    elif jj >= w:
                        jj = w - 1
                    v = src[i, jj]
                    if v < m:
                        m = v
                tv[i, j] = m
        for i in range(h):
            for j in range(w):
                m = tv[i, j]
                for k in range(-r, r + 1):
                    ii = i + k
                    if ii < 0:
                        ii = 0
                    elif ii >= h:
                        ii = h - 1
                    v = tv[ii, j]
                    if v < m:
                        m = v
                ov[i, j] = m
    return out
