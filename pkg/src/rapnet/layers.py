"""Parameters, module tree, and the conv/batchnorm/linear building blocks."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor updated by the optimizer.

    `decay` marks weight matrices that participate in the L2 penalty; biases
    and batchnorm affines set it False.
    """
    __slots__ = ("decay",)

    def __init__(self, data, decay: bool = True):
        super().__init__(data, requires_grad=True)
        self.decay = decay


class Module:
    """Minimal module tree: tracks parameters, buffers and children in
    insertion order so checkpoints and initialization are deterministic."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray):
        self._buffers[name] = name  # key marker; actual array lives on the attr
        object.__setattr__(self, name, np.asarray(value, dtype=np.float64))

    def set_training(self, flag: bool):
        object.__setattr__(self, "training", flag)
        for child in self._children.values():
            child.set_training(flag)
        return self

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_arrays(self) -> dict:
        """name -> ndarray for every parameter and buffer (checkpoint payload)."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, buf in self.named_buffers():
            out[name] = buf
        return out

    def load_state_arrays(self, arrays: dict):
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(arrays)
        extra = set(arrays) - set(params) - set(buffers)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} "
                           f"unexpected={sorted(extra)}")
        for name, p in params.items():
            if p.data.shape != arrays[name].shape:
                raise T.ShapeError(f"{name}: checkpoint shape {arrays[name].shape} "
                                   f"!= model shape {p.data.shape}")
            p.data = np.array(arrays[name], dtype=np.float64)
        for name, buf in buffers.items():
            buf[...] = arrays[name]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv1d(Module):
    """1-D convolution over a (C_in, T) map, odd kernel, optional bias."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng,
                 stride: int = 1, padding: int | None = None, bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = Parameter(he_normal(rng, (c_out, c_in, kernel), c_in * kernel))
        self.bias = Parameter(np.zeros((c_out, 1)), decay=False) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.conv1d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            y = y + self.bias
        return y


class Linear(Module):
    """Dense map applied columnwise: (C_in, T) -> (C_out, T)."""

    def __init__(self, n_in: int, n_out: int, rng, bias: bool = True):
        super().__init__()
        self.weight = Parameter(he_normal(rng, (n_out, n_in), n_in))
        self.bias = Parameter(np.zeros((n_out, 1)), decay=False) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = T.matmul(self.weight, x)
        if self.bias is not None:
            y = y + self.bias
        return y


class BatchNorm1d(Module):
    """Per-channel standardization of one (C, T) map over its temporal axis.

    Training mode normalizes with the map's own statistics and folds them
    into the running estimates (momentum 0.1, unbiased variance); eval mode
    standardizes with the running estimates.
    """

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, channels: int):
        super().__init__()
        self.gamma = Parameter(np.ones(channels), decay=False)
        self.beta = Parameter(np.zeros(channels), decay=False)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        c, t = x.shape
        if t < 1:
            raise T.ShapeError("batchnorm needs at least one time step")
        gamma = self.gamma.reshape(c, 1)
        beta = self.beta.reshape(c, 1)
        if self.training:
            mu = x.mean(axis=1, keepdims=True)
            centered = x - mu
            var = (centered * centered).mean(axis=1, keepdims=True)
            xhat = centered / (var + self.EPS).sqrt()
            unbiased = var.data * (t / (t - 1)) if t > 1 else var.data
            m = self.MOMENTUM
            self.running_mean[...] = (1 - m) * self.running_mean + m * mu.data.reshape(-1)
            self.running_var[...] = (1 - m) * self.running_var + m * unbiased.reshape(-1)
        else:
            mu = self.running_mean.reshape(c, 1)
            sd = np.sqrt(self.running_var.reshape(c, 1) + self.EPS)
            xhat = (x - mu) * (1.0 / sd)
        return xhat * gamma + beta


class ConvBnRelu(Module):
    """The conv-batchnorm-relu block the backbone is assembled from."""

    def __init__(self, c_in: int, c_out: int, kernel: int, rng, stride: int = 1):
        super().__init__()
        self.conv = Conv1d(c_in, c_out, kernel, rng, stride=stride, bias=False)
        self.bn = BatchNorm1d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(self.conv(x)).relu()


class Identity(Module):
    def forward(self, x: Tensor) -> Tensor:
        return x


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self._items = list(modules)
        for i, m in enumerate(self._items):
            self._children[str(i)] = m
            object.__setattr__(self, str(i), m)

    def __iter__(self):
        return iter(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def __len__(self):
        return len(self._items)

    def forward(self, *a, **k):
        raise NotImplementedError("ModuleList is a container")
