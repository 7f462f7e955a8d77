"""Kernel backend selection.

The 1-D convolution forward/backward kernels dominate training time, so they
exist twice: a compiled Cython extension (``rapnet._convops``) and a pure
numpy implementation. The compiled one is used when importable; set
``RAPNET_BACKEND=python`` to force the fallback or ``RAPNET_BACKEND=ext`` to
require the extension. Both produce identical shapes and agree to float64
round-off; determinism holds within a backend.
"""

import os

import numpy as np

__all__ = [
    "backend_name",
    "conv1d_forward",
    "conv1d_backward",
    "conv1d_out_length",
    "np_conv1d_forward",
    "np_conv1d_backward",
]


def conv1d_out_length(t: int, k: int, stride: int, padding: int) -> int:
    return (t + 2 * padding - k) // stride + 1


def _padded(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    c, t = x.shape
    xp = np.zeros((c, t + 2 * padding), dtype=np.float64)
    xp[:, padding:padding + t] = x
    return xp


def _patches(xp: np.ndarray, k: int, stride: int, t_out: int) -> np.ndarray:
    # view of shape (C_in, K, T_out); xp must stay alive while this is used
    s0, s1 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(xp.shape[0], k, t_out), strides=(s0, s1, s1 * stride))


def np_conv1d_forward(x, w, stride, padding):
    """Cross-correlate x (C_in, T) with w (C_out, C_in, K) -> (C_out, T')."""
    k = w.shape[2]
    t_out = conv1d_out_length(x.shape[1], k, stride, padding)
    cols = _patches(_padded(x, padding), k, stride, t_out)
    return np.tensordot(w, cols, axes=([1, 2], [0, 1]))


def np_conv1d_backward(x, w, gy, stride, padding):
    """Gradients of np_conv1d_forward: returns (d/dx, d/dw)."""
    c_in, t = x.shape
    k = w.shape[2]
    t_out = gy.shape[1]
    xp = _padded(x, padding)
    cols = _patches(xp, k, stride, t_out)
    gw = np.tensordot(gy, cols, axes=([1], [2]))  # (C_out, C_in, K)
    # scatter w^T gy back onto the padded input
    tmp = np.einsum("ock,ot->ckt", w, gy)  # (C_in, K, T_out)
    gxp = np.zeros_like(xp)
    for kk in range(k):
        gxp[:, kk:kk + t_out * stride:stride] += tmp[:, kk, :]
    if padding:
        return gxp[:, padding:padding + t], gw
    return gxp, gw


_force = os.environ.get("RAPNET_BACKEND", "").strip().lower()

_ext = None
if _force != "python":
    try:
        from . import _convops as _ext
    except ImportError:
        _ext = None
if _force in ("ext", "compiled") and _ext is None:
    raise ImportError(
        "RAPNET_BACKEND=ext but the rapnet._convops extension is not built")

if _ext is not None:
    def conv1d_forward(x, w, stride, padding):
        return _ext.conv1d_forward(
            np.ascontiguousarray(x), np.ascontiguousarray(w), stride, padding)

    def conv1d_backward(x, w, gy, stride, padding):
        return _ext.conv1d_backward(
            np.ascontiguousarray(x), np.ascontiguousarray(w),
            np.ascontiguousarray(gy), stride, padding)
else:
    conv1d_forward = np_conv1d_forward
    conv1d_backward = np_conv1d_backward


def backend_name() -> str:
    return "ext" if _ext is not None else "python"
