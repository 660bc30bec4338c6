# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels: softmax and layer norm over the last axis.

All entry points take C-contiguous float64 arrays already reshaped to 2-D
(rows x width); the Python wrapper in ``_backend`` does the reshaping.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def softmax_fwd(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    cdef double mx, s
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(m):
                y[i, j] = exp(x[i, j] - mx)
                s += y[i, j]
            for j in range(m):
                y[i, j] = y[i, j] / s
    return out


def softmax_bwd(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    cdef double dot
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] gx = out
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += gy[i, j] * y[i, j]
            for j in range(m):
                gx[i, j] = y[i, j] * (gy[i, j] - dot)
    return out


def layer_norm_fwd(const double[:, ::1] x, const double[::1] gain,
                   const double[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], i, j
    cdef double mean, var, r, c
    out = np.empty((n, d), dtype=np.float64)
    xhat_arr = np.empty((n, d), dtype=np.float64)
    rstd_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(d):
                mean += x[i, j]
            mean = mean / d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mean
                var += c * c
            var = var / d
            r = 1.0 / sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                xhat[i, j] = (x[i, j] - mean) * r
                y[i, j] = xhat[i, j] * gain[j] + bias[j]
    return out, xhat_arr, rstd_arr


def layer_norm_bwd(const double[:, ::1] gy, const double[:, ::1] xhat,
                   const double[::1] rstd, const double[::1] gain):
    cdef Py_ssize_t n = gy.shape[0], d = gy.shape[1], i, j
    cdef double m1, m2, g
    gx_arr = np.empty((n, d), dtype=np.float64)
    ggain_arr = np.zeros(d, dtype=np.float64)
    gbias_arr = np.zeros(d, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] ggain = ggain_arr
    cdef double[::1] gbias = gbias_arr
    with nogil:
        for i in range(n):
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                g = gy[i, j] * gain[j]
                m1 += g
                m2 += g * xhat[i, j]
                ggain[j] += gy[i, j] * xhat[i, j]
                gbias[j] += gy[i, j]
            m1 = m1 / d
            m2 = m2 / d
            for j in range(d):
                gx[i, j] = rstd[i] * (gy[i, j] * gain[j] - m1 - xhat[i, j] * m2)
    return gx_arr, ggain_arr, gbias_arr
