# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled 1-D convolution kernels (float64, single sequence).

Same contracts as the numpy fallback in rapnet.backend: cross-correlation of
an (C_in, T) map with an (C_out, C_in, K) filter bank. Boundary handling is
hoisted out of the inner loops so they run branch-free over contiguous
output ranges.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _j_lo(Py_ssize_t kk, Py_ssize_t padding, Py_ssize_t stride):
    # smallest j with j*stride + kk - padding >= 0
    if kk >= padding:
        return 0
    return (padding - kk + stride - 1) // stride


cdef inline Py_ssize_t _j_hi(Py_ssize_t kk, Py_ssize_t padding, Py_ssize_t stride,
                             Py_ssize_t t, Py_ssize_t t_out):
    # one past the largest j with j*stride + kk - padding <= t - 1
    cdef Py_ssize_t hi = (t - 1 - kk + padding) // stride + 1
    if hi > t_out:
        return t_out
    return hi


def conv1d_forward(double[:, ::1] x, double[:, :, ::1] w, int stride, int padding):
    cdef Py_ssize_t c_in = x.shape[0]
    cdef Py_ssize_t t = x.shape[1]
    cdef Py_ssize_t c_out = w.shape[0]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t t_out = (t + 2 * padding - k) // stride + 1
    cdef cnp.ndarray[double, ndim=2] y = np.zeros((c_out, t_out), dtype=np.float64)
    cdef double[:, ::1] yv = y
    cdef Py_ssize_t o, c, kk, j, lo, hi, base
    cdef double wv
    for o in range(c_out):
        for c in range(c_in):
            for kk in range(k):
                wv = w[o, c, kk]
                lo = _j_lo(kk, padding, stride)
                hi = _j_hi(kk, padding, stride, t, t_out)
                base = kk - padding
                if stride == 1:
                    for j in range(lo, hi):
                        yv[o, j] += wv * x[c, j + base]
                else:
                    for j in range(lo, hi):
                        yv[o, j] += wv * x[c, j * stride + base]
    return y


def conv1d_backward(double[:, ::1] x, double[:, :, ::1] w, double[:, ::1] gy,
                    int stride, int padding):
    cdef Py_ssize_t c_in = x.shape[0]
    cdef Py_ssize_t t = x.shape[1]
    cdef Py_ssize_t c_out = w.shape[0]
    cdef Py_ssize_t k = w.shape[2]
    cdef Py_ssize_t t_out = gy.shape[1]
    cdef cnp.ndarray[double, ndim=2] gx = np.zeros((c_in, t), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3] gw = np.zeros((c_out, c_in, k), dtype=np.float64)
    cdef double[:, ::1] gxv = gx
    cdef double[:, :, ::1] gwv = gw
    cdef Py_ssize_t o, c, kk, j, lo, hi, base
    cdef double wv, acc
    for o in range(c_out):
        for c in range(c_in):
            for kk in range(k):
                wv = w[o, c, kk]
                lo = _j_lo(kk, padding, stride)
                hi = _j_hi(kk, padding, stride, t, t_out)
                base = kk - padding
                acc = 0.0
                if stride == 1:
                    for j in range(lo, hi):
                        acc += gy[o, j] * x[c, j + base]
                        gxv[c, j + base] += wv * gy[o, j]
                else:
                    for j in range(lo, hi):
                        acc += gy[o, j] * x[c, j * stride + base]
                        gxv[c, j * stride + base] += wv * gy[o, j]
                gwv[o, c, kk] = acc
    return gx, gw
