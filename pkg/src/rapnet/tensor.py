"""Dense float64 tensors with reverse-mode automatic differentiation.

Exactly the kernel set the proposal network needs: matmul, 1-D convolution,
a small elementwise family, reductions, concatenation, linear upsampling and
the backward pass. Values are 64-bit throughout so finite-difference checks
resolve; non-finite values are an error state (checked eagerly when enabled
via RAPNET_CHECK_FINITE or :func:`set_finite_checks`).

Tensors are immutable after creation: ops allocate new buffers and gradient
accumulation never writes in place, so read-only sharing across threads is
safe for inference fan-out.
"""

from __future__ import annotations

import os

import numpy as np

from .backend import conv1d_backward, conv1d_forward, conv1d_out_length

__all__ = [
    "Tensor", "ShapeError", "tensor", "zeros", "concat", "matmul", "conv1d",
    "upsample_linear", "backward", "set_finite_checks", "no_grad",
]


class ShapeError(ValueError):
    """Operand extents do not line up."""


_check_finite = os.environ.get("RAPNET_CHECK_FINITE", "") in ("1", "true", "yes")
_grad_enabled = True


class no_grad:
    """Context manager that skips graph construction (inference fan-out)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf validation (off by default; costs a pass per op)."""
    global _check_finite
    _check_finite = bool(enabled)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._done = False

    # ------------------------------------------------------------- basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        """The raw buffer; treat as read-only."""
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------ graph plumbing
    @staticmethod
    def _result(data, parents, backward_fn):
        out = Tensor(data)
        if _check_finite and not np.all(np.isfinite(out.data)):
            raise FloatingPointError("non-finite value produced by an op")
        if _grad_enabled:
            live = tuple(p for p in parents if p.requires_grad)
            if live:
                out.requires_grad = True
                out._parents = live
                out._backward = backward_fn
        return out

    def _accumulate(self, g: np.ndarray) -> None:
        # never in place: backward closures may hand out views
        self.grad = g if self.grad is None else self.grad + g

    # ---------------------------------------------------------- arithmetic
    def __add__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))
        return Tensor._result(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self

        def back(g):
            a._accumulate(-g)
        return Tensor._result(-a.data, (a,), back)

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))
        return Tensor._result(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data),
                                           b.data.shape))
        return Tensor._result(a.data / b.data, (a, b), back)

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    # --------------------------------------------------------- elementwise
    def relu(self):
        a = self
        mask = a.data > 0

        def back(g):
            a._accumulate(g * mask)
        return Tensor._result(np.where(mask, a.data, 0.0), (a,), back)

    def sigmoid(self):
        a = self
        s = 1.0 / (1.0 + np.exp(-a.data))

        def back(g):
            a._accumulate(g * s * (1.0 - s))
        return Tensor._result(s, (a,), back)

    def exp(self):
        a = self
        e = np.exp(a.data)

        def back(g):
            a._accumulate(g * e)
        return Tensor._result(e, (a,), back)

    def log(self):
        a = self

        def back(g):
            a._accumulate(g / a.data)
        return Tensor._result(np.log(a.data), (a,), back)

    def softplus(self):
        """log(1 + exp(x)), computed stably; gradient is sigmoid(x)."""
        a = self
        out = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

        def back(g):
            a._accumulate(g / (1.0 + np.exp(-a.data)))
        return Tensor._result(out, (a,), back)

    def sqrt(self):
        a = self
        r = np.sqrt(a.data)

        def back(g):
            a._accumulate(g * 0.5 / r)
        return Tensor._result(r, (a,), back)

    def maximum(self, other):
        other = _as_tensor(other)
        a, b = self, other
        take_a = a.data >= b.data

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * take_a, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))
        return Tensor._result(np.where(take_a, a.data, b.data), (a, b), back)

    def minimum(self, other):
        other = _as_tensor(other)
        a, b = self, other
        take_a = a.data <= b.data

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * take_a, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * ~take_a, b.data.shape))
        return Tensor._result(np.where(take_a, a.data, b.data), (a, b), back)

    def clip(self, lo: float, hi: float):
        return self.maximum(lo).minimum(hi)

    def smooth_l1(self):
        """Elementwise Huber with transition point 1: 0.5 x^2 inside, |x| - 0.5 outside."""
        a = self
        absd = np.abs(a.data)
        out = np.where(absd < 1.0, 0.5 * a.data * a.data, absd - 0.5)

        def back(g):
            a._accumulate(g * np.clip(a.data, -1.0, 1.0))
        return Tensor._result(out, (a,), back)

    # ---------------------------------------------------------- reductions
    def sum(self, axis=None, keepdims: bool = False):
        a = self

        def back(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape))
            elif keepdims:
                a._accumulate(np.broadcast_to(g, a.data.shape))
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape))
        return Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ------------------------------------------------------------- shaping
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old = a.data.shape

        def back(g):
            a._accumulate(g.reshape(old))
        return Tensor._result(a.data.reshape(shape), (a,), back)

    def transpose(self):
        if self.data.ndim != 2:
            raise ShapeError("transpose expects a 2-D tensor")
        a = self

        def back(g):
            a._accumulate(g.T)
        return Tensor._result(a.data.T.copy(), (a,), back)

    @property
    def T(self):
        return self.transpose()

    def narrow(self, axis: int, start: int, length: int):
        """Contiguous slice along one axis."""
        a = self
        idx = [slice(None)] * a.data.ndim
        idx[axis] = slice(start, start + length)
        idx = tuple(idx)

        def back(g):
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)
        return Tensor._result(a.data[idx].copy(), (a,), back)

    # ------------------------------------------------------------ backward
    def backward(self):
        backward(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data) -> Tensor:
    return Tensor(data)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors; gradient flows to both."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} vs {b.data.shape}")

    def back(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)
    return Tensor._result(a.data @ b.data, (a, b), back)


def conv1d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate x (C_in, T) with w (C_out, C_in, K) -> (C_out, T').

    K must be odd; raises ShapeError when the output would be empty.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise ShapeError("conv1d expects x (C_in, T) and w (C_out, C_in, K)")
    c_in, t = x.data.shape
    if w.data.shape[1] != c_in:
        raise ShapeError(f"conv1d channel mismatch: x has {c_in}, w expects "
                         f"{w.data.shape[1]}")
    k = w.data.shape[2]
    if k % 2 == 0:
        raise ShapeError("conv1d kernel size must be odd")
    if conv1d_out_length(t, k, stride, padding) < 1:
        raise ShapeError(f"conv1d output would be empty for T={t}, K={k}, "
                         f"stride={stride}, padding={padding}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)

    def back(g):
        gx, gw = conv1d_backward(xd, wd, np.ascontiguousarray(g), stride, padding)
        if x.requires_grad:
            x._accumulate(gx)
        if w.requires_grad:
            w._accumulate(gw)
    return Tensor._result(conv1d_forward(xd, wd, stride, padding), (x, w), back)


def concat(parts, axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis; other extents must match."""
    parts = [_as_tensor(p) for p in parts]
    ref = parts[0].data.shape
    for p in parts[1:]:
        got = p.data.shape
        if len(got) != len(ref) or any(
                g != r for i, (g, r) in enumerate(zip(got, ref)) if i != axis):
            raise ShapeError(f"concat extents differ off axis {axis}: {got} vs {ref}")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(g[tuple(idx)])
    return Tensor._result(
        np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back)


def upsample_linear(x: Tensor, factor: int = 2) -> Tensor:
    """Double the temporal extent of a (C, T) map by linear interpolation.

    Output endpoints coincide with input endpoints (sample positions span the
    full input range), so constant maps stay constant.
    """
    if factor != 2:
        raise ShapeError("upsample_linear supports factor 2 only")
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeError("upsample_linear expects a (C, T) tensor")
    c, t = x.data.shape
    t_out = 2 * t
    if t == 1:
        pos = np.zeros(t_out)
    else:
        pos = np.arange(t_out) * ((t - 1) / (t_out - 1))
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, t - 1)
    frac = pos - i0
    w0, w1 = 1.0 - frac, frac

    def back(g):
        gt = np.zeros((t, c))
        np.add.at(gt, i0, (g * w0).T)
        np.add.at(gt, i1, (g * w1).T)
        x._accumulate(gt.T)
    out = x.data[:, i0] * w0 + x.data[:, i1] * w1
    return Tensor._result(out, (x,), back)


def backward(loss: Tensor) -> None:
    """Populate .grad for every reachable tensor that requires grad.

    The loss must be a finite scalar. Each graph supports a single backward
    pass; rerunning without a fresh forward raises.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("backward on a non-finite loss")
    if loss._done:
        raise RuntimeError("backward already ran for this graph; rerun the forward")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
            node._backward = None  # free closures, forbid reuse
        node._done = True
