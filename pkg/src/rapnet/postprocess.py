"""Two-stage refinement: actionness grouping, boundary blending, proposal
ranking with a relation-enhanced scorer, and Soft-NMS suppression."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .anchors import iou
from .layers import Conv1d, Linear, Module
from .relation import RelationAwareModule
from .tensor import Tensor

DEFAULT_TAG_THRESHOLDS = tuple(i / 10 for i in range(1, 10))


@dataclass(frozen=True)
class ScoredInterval:
    start: float
    end: float
    score: float
    source: str = "rap"

    def box(self):
        return (self.start, self.end)


def tag_group(p_a: np.ndarray, thresholds=DEFAULT_TAG_THRESHOLDS) -> list:
    """Group consecutive snippets whose actionness exceeds each threshold.

    Snippet u spans [u/T, (u+1)/T]. Identical intervals produced by several
    thresholds are merged; each proposal scores the mean actionness inside.
    """
    p_a = np.asarray(p_a, dtype=np.float64)
    t = p_a.size
    seen = {}
    for tau in thresholds:
        above = p_a > tau
        u = 0
        while u < t:
            if not above[u]:
                u += 1
                continue
            v = u
            while v + 1 < t and above[v + 1]:
                v += 1
            key = (u, v)
            if key not in seen:
                seen[key] = ScoredInterval(u / t, (v + 1) / t,
                                           float(p_a[u:v + 1].mean()), "tag")
            u = v + 1
    return list(seen.values())


def adjust_boundaries(rap: list, tag: list, blend: float = 0.5,
                      match_thresh: float = 0.5) -> list:
    """Blend each proposal's endpoints with its best-overlapping grouped
    candidate when that overlap beats `match_thresh`; scores unchanged."""
    if not (0.0 <= blend <= 1.0):
        raise ValueError(f"blend ratio must be in [0, 1], got {blend}")
    if not tag or blend == 0.0:
        return list(rap)
    out = []
    for p in rap:
        best, best_iou = None, 0.0
        for q in tag:
            v = iou(p.box(), q.box())
            if v > best_iou:
                best, best_iou = q, v
        if best is not None and best_iou > match_thresh:
            out.append(replace(
                p,
                start=best.start * blend + p.start * (1.0 - blend),
                end=best.end * blend + p.end * (1.0 - blend)))
        else:
            out.append(p)
    return out


# ------------------------------------------------------------------ ranking

CORE_POINTS = 16
CONTEXT_POINTS = 8
FEATURE_POINTS = CORE_POINTS + 2 * CONTEXT_POINTS


def _interp_actionness(p_a: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Linear interpolation of the snippet sequence at normalized coords,
    clamped to the [0, 1] span."""
    t = p_a.size
    pos = np.clip(coords, 0.0, 1.0) * t - 0.5
    pos = np.clip(pos, 0.0, t - 1.0)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, t - 1)
    frac = pos - i0
    return p_a[i0] * (1.0 - frac) + p_a[i1] * frac


def proposal_feature(p_a: np.ndarray, start: float, end: float) -> np.ndarray:
    """Fixed-length profile: 8 left-context, 16 core, 8 right-context samples
    of the actionness curve; context regions span half the duration."""
    d = end - start
    left = start - d / 2 + (np.arange(CONTEXT_POINTS) + 0.5) / CONTEXT_POINTS * (d / 2)
    core = start + (np.arange(CORE_POINTS) + 0.5) / CORE_POINTS * d
    right = end + (np.arange(CONTEXT_POINTS) + 0.5) / CONTEXT_POINTS * (d / 2)
    return _interp_actionness(p_a, np.concatenate([left, core, right]))


class RankerNet(Module):
    """Overlap estimator on the 32-point proposal profile: kernel-1 embed to
    8 channels, relation module, then a 128-wide hidden layer to a sigmoid
    scalar."""

    EMBED = 8
    HIDDEN = 128

    def __init__(self, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.embed = Conv1d(1, self.EMBED, 1, rng)
        self.ram = RelationAwareModule(self.EMBED, rng, reduction=4)
        self.hidden = Linear(self.EMBED * FEATURE_POINTS, self.HIDDEN, rng)
        self.out = Linear(self.HIDDEN, 1, rng)

    def forward(self, feature) -> Tensor:
        x = feature if isinstance(feature, Tensor) else Tensor(feature)
        x = self.ram(self.embed(x.reshape(1, FEATURE_POINTS)))
        x = self.hidden(x.reshape(self.EMBED * FEATURE_POINTS, 1)).relu()
        return self.out(x).sigmoid().reshape(())

    def estimate(self, feature: np.ndarray) -> float:
        with T.no_grad():
            return self.forward(feature).item()


def rank_proposals(props: list, p_a: np.ndarray, scorer) -> list:
    """Rescale each score by the scorer's overlap estimate for the proposal's
    actionness profile; membership is preserved."""
    fn = scorer.estimate if isinstance(scorer, RankerNet) else scorer
    out = []
    for p in props:
        estimate = fn(proposal_feature(p_a, p.start, p.end))
        out.append(replace(p, score=p.score * float(estimate)))
    return out


# ---------------------------------------------------------------- soft-nms

def soft_nms(props: list, sigma: float = 0.5, min_score: float = 1e-4,
             top_k: int = 100, overlap_thresh: float = 0.65) -> list:
    """Gaussian score decay: repeatedly keep the best remaining proposal and
    decay overlapping survivors by exp(-iou^2 / sigma) when their overlap
    with the pick exceeds `overlap_thresh`. Picks come back in selection
    order with their decayed scores."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = len(props)
    if n == 0:
        return []
    boxes = np.array([[p.start, p.end] for p in props])
    scores = np.array([p.score for p in props], dtype=np.float64)
    alive = np.ones(n, dtype=bool)
    picks = []
    while len(picks) < top_k and alive.any():
        live = np.where(alive)[0]
        best = live[int(np.argmax(scores[live]))]
        if scores[best] < min_score:
            break
        picks.append(replace(props[best], score=float(scores[best])))
        alive[best] = False
        live = live[live != best]
        if live.size:
            inter = (np.minimum(boxes[live, 1], boxes[best, 1])
                     - np.maximum(boxes[live, 0], boxes[best, 0]))
            inter = np.maximum(inter, 0.0)
            union = ((boxes[live, 1] - boxes[live, 0])
                     + (boxes[best, 1] - boxes[best, 0]) - inter)
            overlap = np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)
            decay = overlap > overlap_thresh
            scores[live[decay]] *= np.exp(-overlap[decay] ** 2 / sigma)
    return picks
