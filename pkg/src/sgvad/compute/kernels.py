"""Depthwise convolution kernels with a compiled fast path.

The Cython extension ``_kernels`` is used when it imports; otherwise (or
when ``SGVAD_PURE_PYTHON=1``) the numpy implementations below are used.
Both take contiguous (B, C, T) inputs and (C, K) weights of one dtype.
"""
import os

import numpy as np


def _pad(dilation, k):
    return dilation * (k - 1) // 2


def depthwise_forward_numpy(x, w, dilation=1):
    b, c, t = x.shape
    k = w.shape[1]
    pad = _pad(dilation, k)
    xp = np.zeros((b, c, t + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + t] = x
    out = np.zeros_like(x)
    for j in range(k):
        off = j * dilation
        out += w[None, :, j, None] * xp[:, :, off:off + t]
    return out


def depthwise_backward_numpy(x, w, gout, dilation=1):
    b, c, t = x.shape
    k = w.shape[1]
    pad = _pad(dilation, k)
    xp = np.zeros((b, c, t + 2 * pad), dtype=x.dtype)
    xp[:, :, pad:pad + t] = x
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for j in range(k):
        off = j * dilation
        gw[:, j] = np.einsum("bct,bct->c", gout, xp[:, :, off:off + t])
        gxp[:, :, off:off + t] += w[None, :, j, None] * gout
    return np.ascontiguousarray(gxp[:, :, pad:pad + t]), gw


try:
    if os.environ.get("SGVAD_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("compiled kernels disabled by SGVAD_PURE_PYTHON")
    from ._kernels import depthwise_backward as _bwd_c
    from ._kernels import depthwise_forward as _fwd_c
    BACKEND = "cython"
except ImportError:
    _fwd_c = _bwd_c = None
    BACKEND = "numpy"


def depthwise_forward(x, w, dilation=1):
    if _fwd_c is not None:
        return _fwd_c(np.ascontiguousarray(x), np.ascontiguousarray(w, dtype=x.dtype), dilation)
    return depthwise_forward_numpy(x, w.astype(x.dtype, copy=False), dilation)


def depthwise_backward(x, w, gout, dilation=1):
    if _bwd_c is not None:
        return _bwd_c(np.ascontiguousarray(x), np.ascontiguousarray(w, dtype=x.dtype),
                      np.ascontiguousarray(gout, dtype=x.dtype), dilation)
    return depthwise_backward_numpy(x, w.astype(x.dtype, copy=False),
                                    gout.astype(x.dtype, copy=False), dilation)
