# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled depthwise 1-D convolution kernels ("same" zero padding, dilation)."""
import numpy as np
cimport cython

ctypedef fused real:
    float
    double


def depthwise_forward(real[:, :, ::1] x, real[:, ::1] w, Py_ssize_t dilation):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], T = x.shape[2], K = w.shape[1]
    cdef Py_ssize_t pad = dilation * (K - 1) // 2
    cdef Py_ssize_t b, c, t, k, s, lo, hi
    cdef real acc, wk
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((B, C, T), dtype=dtype)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for b in range(B):
            for c in range(C):
                for k in range(K):
                    wk = w[c, k]
                    s = k * dilation - pad
                    lo = 0 if s >= 0 else -s
                    hi = T if s <= 0 else T - s
                    for t in range(lo, hi):
                        out[b, c, t] += wk * x[b, c, t + s]
    return out_arr


def depthwise_backward(real[:, :, ::1] x, real[:, ::1] w, real[:, :, ::1] gout,
                       Py_ssize_t dilation):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], T = x.shape[2], K = w.shape[1]
    cdef Py_ssize_t pad = dilation * (K - 1) // 2
    cdef Py_ssize_t b, c, t, k, s, lo, hi
    cdef real acc, wk, g
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.zeros((B, C, T), dtype=dtype)
    gw_arr = np.zeros((C, K), dtype=dtype)
    cdef real[:, :, ::1] gx = gx_arr
    cdef real[:, ::1] gw = gw_arr
    with nogil:
        for c in range(C):
            for k in range(K):
                wk = w[c, k]
                s = k * dilation - pad
                lo = 0 if s >= 0 else -s
                hi = T if s <= 0 else T - s
                acc = 0
                for b in range(B):
                    for t in range(lo, hi):
                        g = gout[b, c, t]
                        acc = acc + g * x[b, c, t + s]
                        gx[b, c, t + s] += wk * g
                gw[c, k] = acc
    return gx_arr, gw_arr
