"""Composite training objective: proposal loss, actionness loss, and the L2
regularized total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .anchors import AssignmentResult
from .network import RawPrediction, decode_level
from .tensor import Tensor, no_grad


@dataclass
class LossConfig:
    # absolute scale is free as long as lambda1 stays 10x lambda2; the scale
    # below is what makes the short desk-scale schedule converge (the
    # actionness branch in particular needs lambda2 well above 0.1 to train
    # within a few hundred steps)
    lambda1: float = 20.0     # proposal weight
    lambda2: float = 2.0      # actionness weight
    lambda3: float = 0.0005   # L2 weight
    lambda_conf: float = 0.2
    lambda_c: float = 1.0
    lambda_w: float = 1.0
    lambda_iou: float = 1.0
    logit_clamp: float = 15.0
    prob_clamp: float = 1e-7

    def __post_init__(self):
        if abs(self.lambda1 - 10.0 * self.lambda2) > 1e-12:
            raise ValueError("lambda1 must equal 10 * lambda2")


@dataclass
class LossReport:
    """Unweighted loss parts; total applies the configured weights."""
    total: float
    prop_conf_pos: float
    prop_conf_neg: float
    prop_center: float
    prop_width: float
    prop_iou: float
    actionness: float
    l2: float

    PART_FIELDS = ("prop_conf_pos", "prop_conf_neg", "prop_center",
                   "prop_width", "prop_iou", "actionness", "l2")

    def parts(self) -> dict:
        return {name: getattr(self, name) for name in self.PART_FIELDS}

    @staticmethod
    def csv_header() -> str:
        return "step," + ",".join(LossReport.PART_FIELDS) + ",total"

    def csv_row(self, step: int) -> str:
        vals = [f"{getattr(self, n):.6f}" for n in self.PART_FIELDS]
        return f"{step}," + ",".join(vals) + f",{self.total:.6f}"


def _bce_logits(z: Tensor, target, clamp: float) -> Tensor:
    """Binary cross-entropy with logits; logits clamped to +-clamp."""
    z = z.clip(-clamp, clamp)
    return z.softplus() - z * target


def proposal_loss(raw: RawPrediction, assign: AssignmentResult,
                  cfg: LossConfig, frozen_iou_targets=None) -> dict:
    """Per-part proposal losses as scalar tensors (unweighted).

    Confidence averages positives by N_pos and negatives by N_neg; center,
    width and IoU terms cover positives only. The IoU part adds the decoded
    overlap penalty (1 - IoU against the matched ground truth) and smooth-L1
    supervision of sigmoid(iou_logit) toward the detached actual IoU.

    `frozen_iou_targets` (per-level arrays) replaces the live detached IoU in
    the supervision term; finite-difference checks need the stop-gradient
    target held fixed to measure the same function the backward pass
    differentiates.
    """
    layout = assign.layout
    n_pos = assign.n_pos
    n_neg = max(assign.n_neg, 1)

    conf_pos = Tensor(0.0)
    conf_neg = Tensor(0.0)
    center = Tensor(0.0)
    width = Tensor(0.0)
    iou_part = Tensor(0.0)

    for i, lv in enumerate(raw.levels):
        pos = assign.layout.level_view(assign.pos_mask, i).astype(np.float64)
        neg = assign.layout.level_view(assign.neg_mask, i).astype(np.float64)
        conf_bce_pos = _bce_logits(lv.conf, 1.0, cfg.logit_clamp)
        conf_bce_neg = _bce_logits(lv.conf, 0.0, cfg.logit_clamp)
        conf_pos = conf_pos + (conf_bce_pos * pos).sum()
        conf_neg = conf_neg + (conf_bce_neg * neg).sum()
        if n_pos:
            c_target = layout.level_view(assign.center_target, i)
            w_target = layout.level_view(assign.logwidth_target, i)
            gt_start = layout.level_view(assign.gt_boxes[:, 0], i)
            gt_end = layout.level_view(assign.gt_boxes[:, 1], i)
            center = center + (_bce_logits(lv.center, c_target,
                                           cfg.logit_clamp) * pos).sum()
            width = width + ((lv.logwidth - w_target).smooth_l1() * pos).sum()

            start, end = decode_level(lv, layout.anchors.widths[i], i, layout.t)
            inter = (end.minimum(gt_end) - start.maximum(gt_start)).maximum(0.0)
            union = (end - start) + (gt_end - gt_start) - inter
            overlap = inter / union
            iou_part = iou_part + ((1.0 - overlap) * pos).sum()
            target = (overlap.data if frozen_iou_targets is None
                      else frozen_iou_targets[i])
            iou_part = iou_part + (
                (lv.iou.sigmoid() - target).smooth_l1() * pos).sum()

    if n_pos:
        conf_pos = conf_pos * (1.0 / n_pos)
        center = center * (1.0 / n_pos)
        width = width * (1.0 / n_pos)
        iou_part = iou_part * (1.0 / n_pos)
    conf_neg = conf_neg * (1.0 / n_neg)
    return {"conf_pos": conf_pos, "conf_neg": conf_neg, "center": center,
            "width": width, "iou": iou_part}


def iou_supervision_targets(raw: RawPrediction, assign: AssignmentResult):
    """Detached per-level IoU of the current decoded boxes against their
    matched ground truths (for freezing in gradient checks)."""
    layout = assign.layout
    out = []
    with no_grad():
        for i, lv in enumerate(raw.levels):
            start, end = decode_level(lv, layout.anchors.widths[i], i, layout.t)
            gs = layout.level_view(assign.gt_boxes[:, 0], i)
            ge = layout.level_view(assign.gt_boxes[:, 1], i)
            inter = np.maximum(np.minimum(end.data, ge)
                               - np.maximum(start.data, gs), 0.0)
            union = (end.data - start.data) + (ge - gs) - inter
            out.append(inter / union)
    return out


def actionness_loss(p_a: Tensor, labels: np.ndarray,
                    cfg: LossConfig | None = None) -> Tensor:
    """Mean binary cross-entropy over all snippets, probabilities clamped."""
    clamp = cfg.prob_clamp if cfg else 1e-7
    labels = np.asarray(labels, dtype=np.float64)
    p = p_a.clip(clamp, 1.0 - clamp)
    ll = p.log() * labels + (1.0 - p).log() * (1.0 - labels)
    return -ll.mean()


def l2_penalty(module) -> Tensor:
    """Sum of squared entries over decaying weight matrices (no biases, no
    batchnorm affines)."""
    total = Tensor(0.0)
    for _, p in module.named_parameters():
        if getattr(p, "decay", False):
            total = total + (p * p).sum()
    return total


def total_loss(prop_parts: dict, act: Tensor, l2: Tensor,
               cfg: LossConfig):
    """Weighted total and its float report."""
    prop = (cfg.lambda_conf * (prop_parts["conf_pos"] + prop_parts["conf_neg"])
            + cfg.lambda_c * prop_parts["center"]
            + cfg.lambda_w * prop_parts["width"]
            + cfg.lambda_iou * prop_parts["iou"])
    total = cfg.lambda1 * prop + cfg.lambda2 * act + cfg.lambda3 * l2
    report = LossReport(
        total=total.item(),
        prop_conf_pos=prop_parts["conf_pos"].item(),
        prop_conf_neg=prop_parts["conf_neg"].item(),
        prop_center=prop_parts["center"].item(),
        prop_width=prop_parts["width"].item(),
        prop_iou=prop_parts["iou"].item(),
        actionness=act.item(),
        l2=l2.item(),
    )
    return total, report
