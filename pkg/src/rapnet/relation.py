"""Relation-aware module: masked bidirectional affinity between temporal
positions, temporal squeeze to a global context vector, and additive channel
recalibration of the input map.

Both direction masks include the diagonal, so every position attends at
least to itself; the "past" branch of position i sees j <= i, the "future"
branch sees j >= i. Affinity rows are softmax-normalized over unmasked
entries unless raw mode is requested.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import Linear, Module
from .tensor import Tensor

MASK_NEG = -1e9  # exp underflows to exactly 0.0, keeping masked entries inert


def direction_mask(kind: str, t: int) -> np.ndarray:
    """0/1 matrix over (T, T); entry [i, j] gates the influence of j on i."""
    if kind == "past":
        return np.tril(np.ones((t, t)))
    if kind == "future":
        return np.triu(np.ones((t, t)))
    raise ValueError(f"unknown direction {kind!r}")


class RelationAwareModule(Module):
    """See module docstring. `aggregate` picks the attended quantity:
    "value" uses the value embedding of the attended position j (default);
    "printed" uses the value at the current position i scaled by the row sum,
    kept for comparison runs.
    """

    def __init__(self, channels: int, rng, reduction: int = 4,
                 normalize: bool = True, aggregate: str = "value"):
        super().__init__()
        if channels % reduction != 0:
            raise ValueError(
                f"channels {channels} not divisible by reduction {reduction}")
        if aggregate not in ("value", "printed"):
            raise ValueError(f"unknown aggregate mode {aggregate!r}")
        self.channels = channels
        self.normalize = normalize
        self.aggregate = aggregate
        self.query = Linear(channels, channels, rng, bias=False)
        self.key = Linear(channels, channels, rng, bias=False)
        self.value = Linear(channels, channels, rng, bias=False)
        self.fuse = Linear(2 * channels, channels, rng, bias=False)
        self.squeeze = Linear(channels, channels // reduction, rng, bias=False)
        self.excite = Linear(channels // reduction, channels, rng, bias=False)
        # zero-init the residual branch so the module starts as the identity
        # and only departs from it where gradient actually flows
        self.excite.weight.data[...] = 0.0
        self._masks = {}

    def _mask(self, kind: str, t: int) -> np.ndarray:
        key = (kind, t)
        if key not in self._masks:
            self._masks[key] = direction_mask(kind, t)
        return self._masks[key]

    def affinity(self, x: Tensor, kind: str) -> Tensor:
        """(T, T) influence matrix of positions j on positions i."""
        t = x.shape[1]
        mask = self._mask(kind, t)
        q = self.query(x)  # embeds the current position i
        k = self.key(x)    # embeds the attended position j
        logits = T.matmul(q.T, k)  # [i, j] = <q_i, k_j>
        if not self.normalize:
            return logits * mask
        gated = logits * mask + MASK_NEG * (1.0 - mask)
        shift = gated.data.max(axis=1, keepdims=True)  # constant, gradient-free
        weights = (gated - shift).exp() * mask
        return weights / weights.sum(axis=1, keepdims=True)

    def directed_refine(self, x: Tensor, kind: str) -> Tensor:
        """Aggregate value embeddings under one direction mask; (C, T)."""
        m = self.affinity(x, kind)
        v = self.value(x)
        if self.aggregate == "printed":
            return v * m.sum(axis=1).reshape(1, x.shape[1])
        return T.matmul(v, m.T)

    def forward(self, x: Tensor) -> Tensor:
        c, t = x.shape
        if c != self.channels:
            raise T.ShapeError(f"expected {self.channels} channels, got {c}")
        refined = T.concat([self.directed_refine(x, "past"),
                            self.directed_refine(x, "future")], axis=0)
        fused = self.fuse(refined)                      # back to C channels
        context = fused.mean(axis=1, keepdims=True)     # (C, 1) temporal squeeze
        z = self.squeeze(context)
        mu = z.mean()
        var = ((z - mu) * (z - mu)).mean()
        z = (z - mu) / (var + 1e-5).sqrt()
        gain = self.excite(z.relu())                    # (C, 1), constant over T
        return x + gain
