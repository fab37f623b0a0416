# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels for softmax and layer normalization.

Same contracts as ``_kernels_py``: 2-D C-contiguous inputs, reduction over
the last axis, float32 or float64.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


def softmax_forward(real[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] y = out
    cdef real mx, inv
    cdef double s
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            for j in range(m):
                y[i, j] = x[i, j] - mx
    # numpy's SIMD exp beats a scalar libm loop
    np.exp(out, out=out)
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += y[i, j]
            inv = <real>(1.0 / s)
            for j in range(m):
                y[i, j] = y[i, j] * inv
    return out


def softmax_backward(real[:, ::1] y, real[:, ::1] gy):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    out = np.empty((n, m), dtype=np.asarray(y).dtype)
    cdef real[:, ::1] gx = out
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += gy[i, j] * y[i, j]
            for j in range(m):
                gx[i, j] = <real>(y[i, j] * (gy[i, j] - dot))
    return out


def layernorm_forward(real[:, ::1] x, real[::1] gain, real[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    dt = np.asarray(x).dtype
    out = np.empty((n, m), dtype=dt)
    xhat_arr = np.empty((n, m), dtype=dt)
    rstd_arr = np.empty(n, dtype=dt)
    cdef real[:, ::1] y = out
    cdef real[:, ::1] xhat = xhat_arr
    cdef real[::1] rstd = rstd_arr
    cdef double mean, var, d, r
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(m):
                mean += x[i, j]
            mean /= m
            var = 0.0
            for j in range(m):
                d = x[i, j] - mean
                var += d * d
            var /= m
            r = 1.0 / sqrt(var + eps)
            rstd[i] = <real>r
            for j in range(m):
                xhat[i, j] = <real>((x[i, j] - mean) * r)
                y[i, j] = <real>(xhat[i, j] * gain[j] + bias[j])
    return out, xhat_arr, rstd_arr


def layernorm_backward(real[:, ::1] gy, real[:, ::1] xhat, real[::1] rstd, real[::1] gain):
    cdef Py_ssize_t n = gy.shape[0], m = gy.shape[1], i, j
    dt = np.asarray(gy).dtype
    gx_arr = np.empty((n, m), dtype=dt)
    # accumulate parameter grads in double regardless of input precision
    g_gain_acc = np.zeros(m, dtype=np.float64)
    g_bias_acc = np.zeros(m, dtype=np.float64)
    cdef real[:, ::1] gx = gx_arr
    cdef double[::1] gg = g_gain_acc
    cdef double[::1] gb = g_bias_acc
    cdef double mean_g, mean_gx, g
    with nogil:
        for i in range(n):
            mean_g = 0.0
            mean_gx = 0.0
            for j in range(m):
                g = gy[i, j] * gain[j]
                mean_g += g
                mean_gx += g * xhat[i, j]
                gg[j] += gy[i, j] * xhat[i, j]
                gb[j] += gy[i, j]
            mean_g /= m
            mean_gx /= m
            for j in range(m):
                gx[i, j] = <real>((gy[i, j] * gain[j] - mean_g - xhat[i, j] * mean_gx) * rstd[i])
    return gx_arr, g_gain_acc.astype(dt), g_bias_acc.astype(dt)
