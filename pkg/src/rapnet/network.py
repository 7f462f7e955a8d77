"""The proposal network: global context extractor, temporal pyramid backbone
with lateral fusion, actionness head, per-level proposal generators, and the
anchor decode/encode geometry."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .anchors import AnchorLayout, AnchorSet
from .layers import Conv1d, ConvBnRelu, Identity, Module, ModuleList
from .relation import RelationAwareModule
from .tensor import Tensor


@dataclass
class NetworkConfig:
    """Field names mirror the config-JSON keys. Desk-scale defaults; the
    reference scale is T=128, C=256, N=6, M=2."""

    T: int = 64
    C: int = 16
    N: int = 4
    M: int = 2
    r: int = 4
    raw_affinity: bool = False
    use_ram: bool = True

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("pyramid depth N must be at least 2")
        if self.M < 1:
            raise ValueError("anchors per cell M must be at least 1")
        if self.T % (2 ** (self.N - 1)) != 0:
            raise ValueError(f"T={self.T} not divisible by 2^(N-1)={2 ** (self.N - 1)}")
        if self.C % 2 != 0:
            raise ValueError("C must be even (lateral channel halving)")
        if self.use_ram and self.C % self.r != 0:
            raise ValueError(f"C={self.C} not divisible by reduction r={self.r}")

    def to_json(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_json(cls, obj: dict) -> "NetworkConfig":
        known = {f.name for f in cls.__dataclass_fields__.values()}
        return cls(**{k: v for k, v in obj.items() if k in known})

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NetworkConfig":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class LevelPrediction:
    """Per-cell, per-anchor heads at one pyramid level, each (T_i, M)."""
    conf: Tensor
    iou: Tensor
    center: Tensor
    logwidth: Tensor


@dataclass
class RawPrediction:
    levels: list  # of LevelPrediction

    def total_instances(self) -> int:
        return sum(lv.conf.size for lv in self.levels)


@dataclass
class PyramidFeatures:
    top_down: list
    bottom_up: list


def _make_ram(cfg: NetworkConfig, rng) -> Module:
    if not cfg.use_ram:
        return Identity()
    return RelationAwareModule(cfg.C, rng, reduction=cfg.r,
                               normalize=not cfg.raw_affinity)


class GlobalContextExtractor(Module):
    """Two kernel-3 conv-BN-ReLU blocks then one relation-aware module."""

    def __init__(self, cfg: NetworkConfig, rng):
        super().__init__()
        self.block1 = ConvBnRelu(cfg.C, cfg.C, 3, rng)
        self.block2 = ConvBnRelu(cfg.C, cfg.C, 3, rng)
        self.ram = _make_ram(cfg, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.ram(self.block2(self.block1(x)))


class PyramidLevel(Module):
    """One downsampling stage: relation module then two conv-BN-ReLU blocks,
    the first at stride 2 for every level but the finest."""

    def __init__(self, cfg: NetworkConfig, rng, ram_rng, stride: int):
        super().__init__()
        self.ram = _make_ram(cfg, ram_rng)
        self.block1 = ConvBnRelu(cfg.C, cfg.C, 3, rng, stride=stride)
        self.block2 = ConvBnRelu(cfg.C, cfg.C, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.block2(self.block1(self.ram(x)))


class LateralFusion(Module):
    """Halve the coarser map's channels, upsample 2x, concatenate with the
    finer map, and fuse back to C channels with a kernel-1 conv."""

    def __init__(self, cfg: NetworkConfig, rng):
        super().__init__()
        self.halve = Conv1d(cfg.C, cfg.C // 2, 1, rng)
        self.fuse = Conv1d(cfg.C + cfg.C // 2, cfg.C, 1, rng)

    def forward(self, fine: Tensor, coarse: Tensor) -> Tensor:
        up = T.upsample_linear(self.halve(coarse), 2)
        return self.fuse(T.concat([fine, up], axis=0))


class TemporalPyramidBackbone(Module):
    def __init__(self, cfg: NetworkConfig, seed: int):
        super().__init__()
        self.levels = ModuleList(
            [PyramidLevel(cfg, _component_rng(seed, f"level{i}"),
                          _component_rng(seed, f"level{i}.ram"),
                          stride=1 if i == 0 else 2)
             for i in range(cfg.N)])
        self.laterals = ModuleList(
            [LateralFusion(cfg, _component_rng(seed, f"lateral{i}"))
             for i in range(cfg.N - 1)])

    def forward(self, g: Tensor) -> PyramidFeatures:
        top_down = []
        x = g
        for level in self.levels:
            x = level(x)
            top_down.append(x)
        bottom_up = [None] * len(top_down)
        bottom_up[-1] = top_down[-1]
        for i in range(len(top_down) - 2, -1, -1):
            bottom_up[i] = self.laterals[i](top_down[i], bottom_up[i + 1])
        return PyramidFeatures(top_down, bottom_up)


class ActionnessHead(Module):
    """Kernel-3 conv to one channel, sigmoid; per-snippet action probability."""

    def __init__(self, cfg: NetworkConfig, rng):
        super().__init__()
        self.conv = Conv1d(cfg.C, 1, 3, rng)

    def forward(self, g: Tensor) -> Tensor:
        return self.conv(g).sigmoid().reshape(g.shape[1])


class ProposalGenerator(Module):
    """Per-level head: two conv-BN-ReLU blocks then a kernel-1 conv to 4M
    channels, split as (conf, iou, center, logwidth) x M."""

    def __init__(self, cfg: NetworkConfig, rng):
        super().__init__()
        self.m = cfg.M
        self.block1 = ConvBnRelu(cfg.C, cfg.C, 3, rng)
        self.block2 = ConvBnRelu(cfg.C, cfg.C, 3, rng)
        self.head = Conv1d(cfg.C, 4 * cfg.M, 1, rng)
        # overlap-estimate channels start flat; random init there injects
        # multiplicative score noise that outlives a short schedule
        self.head.weight.data[cfg.M:2 * cfg.M] *= 0.05

    def forward(self, f: Tensor) -> LevelPrediction:
        out = self.head(self.block2(self.block1(f)))  # (4M, T_i)
        m = self.m
        conf, iou, center, logwidth = (
            out.narrow(0, q * m, m).T for q in range(4))  # each (T_i, M)
        return LevelPrediction(conf, iou, center, logwidth)


@dataclass
class ForwardResult:
    prediction: RawPrediction
    actionness: Tensor
    pyramid: PyramidFeatures
    context: Tensor


def _component_rng(seed: int, name: str) -> np.random.Generator:
    """Independent stream per component, so config switches (use_ram, N, M)
    never shift the draws of unrelated components."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


class RapNet(Module):
    """Full network over a (T, C) feature sequence."""

    def __init__(self, cfg: NetworkConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.gce = GlobalContextExtractor(cfg, _component_rng(seed, "gce"))
        self.actionness_head = ActionnessHead(cfg, _component_rng(seed, "actionness"))
        self.tpb = TemporalPyramidBackbone(cfg, seed)
        self.generators = ModuleList(
            [ProposalGenerator(cfg, _component_rng(seed, f"generator{i}"))
             for i in range(cfg.N)])

    def forward(self, features) -> ForwardResult:
        x = features if isinstance(features, Tensor) else Tensor(features)
        if x.shape != (self.cfg.T, self.cfg.C):
            raise T.ShapeError(f"expected features ({self.cfg.T}, {self.cfg.C}), "
                               f"got {x.shape}")
        g = self.gce(x.T)
        actionness = self.actionness_head(g)
        pyramid = self.tpb(g)
        levels = [gen(f) for gen, f in zip(self.generators, pyramid.bottom_up)]
        return ForwardResult(RawPrediction(levels), actionness, pyramid, g)


# ----------------------------------------------------------------- geometry

def decode_level(pred: LevelPrediction, widths_row: np.ndarray, level: int,
                 t: int):
    """Differentiable decode of one level: (start, end) tensors of shape
    (T_i, M). Width floor 1/T; interval clamped to [0, 1]."""
    t_i = pred.center.shape[0]
    cells = np.arange(t_i, dtype=np.float64)[:, None]
    center = (pred.center.sigmoid() + cells) * (1.0 / t_i)
    width = (pred.logwidth.exp() * widths_row[None, :]).maximum(1.0 / t)
    start = (center - width * 0.5).maximum(0.0)
    end = (center + width * 0.5).minimum(1.0)
    return start, end


def decode_numpy(raw: RawPrediction, anchors: AnchorSet, t: int):
    """Decode every anchor instance to (boxes (A, 2), scores (A,)) numpy
    arrays in AnchorLayout order."""
    boxes, scores = [], []
    for i, lv in enumerate(raw.levels):
        center_logit = lv.center.data
        t_i = center_logit.shape[0]
        cells = np.arange(t_i, dtype=np.float64)[:, None]
        center = (_sigmoid(center_logit) + cells) / t_i
        width = np.maximum(np.exp(lv.logwidth.data) * anchors.widths[i][None, :],
                           1.0 / t)
        start = np.clip(center - width / 2, 0.0, 1.0)
        end = np.clip(center + width / 2, 0.0, 1.0)
        score = _sigmoid(lv.conf.data) * _sigmoid(lv.iou.data)
        boxes.append(np.stack([start.ravel(), end.ravel()], axis=1))
        scores.append(score.ravel())
    return np.concatenate(boxes, axis=0), np.concatenate(scores, axis=0)


def decode_target(level: int, cell: int, anchor_width: float, t: int,
                  p_c: float, p_w: float):
    """Target-space decode used by the encode round-trip and label checks."""
    t_i = t // (2 ** level)
    center = (cell + p_c) / t_i
    width = anchor_width * np.exp(p_w)
    return center - width / 2, center + width / 2


def encode_target(level: int, cell: int, anchor_width: float, t: int,
                  start: float, end: float):
    """Regression targets (p_c, p_w) that reproduce [start, end] at decode."""
    t_i = t // (2 ** level)
    return ((start + end) / 2 * t_i - cell,
            float(np.log((end - start) / anchor_width)))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def layout_for(cfg: NetworkConfig, anchors: AnchorSet) -> AnchorLayout:
    if anchors.levels != cfg.N or anchors.per_cell != cfg.M:
        raise ValueError(f"anchor set ({anchors.levels}x{anchors.per_cell}) does "
                         f"not match config N={cfg.N}, M={cfg.M}")
    return AnchorLayout(anchors, cfg.T)
