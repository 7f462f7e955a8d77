"""Training loop (SGD + momentum, linear warmup then cosine decay), the
proposal generation pipeline, and stage-2 ranker fitting."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .anchors import AnchorSet, assign_actionness_labels, assign_proposal_labels, iou_matrix
from .checkpoint import save_checkpoint
from .evalkit import build_curve
from .data import parallel_map
from .losses import LossConfig, LossReport, actionness_loss, l2_penalty, proposal_loss, total_loss
from .network import NetworkConfig, RapNet, decode_numpy, layout_for
from .postprocess import (RankerNet, ScoredInterval, adjust_boundaries,
                          proposal_feature, rank_proposals, soft_nms, tag_group)


@dataclass
class TrainConfig:
    batch_size: int = 16
    base_lr: float = 0.005
    epochs: int = 18
    warmup_epochs: int = 4
    momentum: float = 0.9
    seed: int = 0
    eta: float = 0.1          # actionness label expansion
    iou_screen: float = 0.5   # negative screening threshold

    def __post_init__(self):
        if self.warmup_epochs >= self.epochs:
            raise ValueError("warmup must be shorter than the run")


def lr_at(step: int, total_steps: int, warmup_steps: int, base: float) -> float:
    """Linear 0 -> base over the warmup steps (hits base exactly on the last
    one), then cosine decay reaching zero one step past the end."""
    if warmup_steps > 0 and step < warmup_steps:
        return base * (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    return 0.5 * base * (1.0 + math.cos(math.pi * (step - warmup_steps) / span))


class SGD:
    def __init__(self, params, momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data - lr * v


# ------------------------------------------------------------ loss per video

def video_losses(net: RapNet, record, layout, loss_cfg: LossConfig,
                 train_cfg: TrainConfig):
    """Forward one video and build its proposal/actionness loss tensors."""
    res = net.forward(record.features)
    boxes, _ = decode_numpy(res.prediction, layout.anchors, net.cfg.T)
    assign = assign_proposal_labels(record.segments, layout, decoded_boxes=boxes,
                                    iou_screen=train_cfg.iou_screen)
    labels = assign_actionness_labels(record.segments, net.cfg.T,
                                      eta=train_cfg.eta)
    parts = proposal_loss(res.prediction, assign, loss_cfg)
    act = actionness_loss(res.actionness, labels, loss_cfg)
    return parts, act


@dataclass
class TrainResult:
    checkpoint_path: str
    config_path: str
    log_path: str
    best_auc: float
    best_epoch: int
    steps: int


def train(net_cfg: NetworkConfig, train_cfg: TrainConfig, records,
          anchors: AnchorSet, out_dir, loss_cfg: LossConfig | None = None,
          progress=None) -> TrainResult:
    """Fit the network on the train split; keep the checkpoint with the best
    validation AUC; log every step's loss report to CSV."""
    os.makedirs(out_dir, exist_ok=True)
    loss_cfg = loss_cfg or LossConfig()
    layout = layout_for(net_cfg, anchors)
    train_recs = [r for r in records if r.split == "train"]
    val_recs = [r for r in records if r.split == "val"]
    if not train_recs:
        raise ValueError("no training videos")

    net = RapNet(net_cfg, seed=train_cfg.seed)
    opt = SGD(net.parameters(), momentum=train_cfg.momentum)
    rng = np.random.default_rng(train_cfg.seed)

    steps_per_epoch = math.ceil(len(train_recs) / train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs
    warmup_steps = steps_per_epoch * train_cfg.warmup_epochs

    ckpt_path = os.path.join(out_dir, "checkpoint.rapw")
    config_path = os.path.join(out_dir, "config.json")
    log_path = os.path.join(out_dir, "train_log.csv")
    best_auc, best_epoch = -1.0, -1
    step = 0

    with open(log_path, "w") as log:
        log.write(LossReport.csv_header() + "\n")
        for epoch in range(train_cfg.epochs):
            order = rng.permutation(len(train_recs))
            net.set_training(True)
            for lo in range(0, len(order), train_cfg.batch_size):
                batch = [train_recs[i] for i in order[lo:lo + train_cfg.batch_size]]
                net.zero_grad()
                sum_parts = None
                sum_act = None
                for rec in batch:
                    parts, act = video_losses(net, rec, layout, loss_cfg, train_cfg)
                    for name, tensor in list(parts.items()) + [("actionness", act)]:
                        if not np.isfinite(tensor.data).all():
                            raise RuntimeError(
                                f"non-finite loss at step {step}, part {name}, "
                                f"video {rec.video_id}")
                    if sum_parts is None:
                        sum_parts, sum_act = parts, act
                    else:
                        sum_parts = {k: sum_parts[k] + parts[k] for k in parts}
                        sum_act = sum_act + act
                inv = 1.0 / len(batch)
                mean_parts = {k: v * inv for k, v in sum_parts.items()}
                mean_act = sum_act * inv
                l2 = l2_penalty(net)
                total, report = total_loss(mean_parts, mean_act, l2, loss_cfg)
                if not math.isfinite(report.total):
                    raise RuntimeError(f"non-finite loss at step {step}, part total")
                T.backward(total)
                opt.step(lr_at(step, total_steps, warmup_steps, train_cfg.base_lr))
                log.write(report.csv_row(step) + "\n")
                step += 1

            if val_recs:
                auc = validation_auc(net, val_recs, anchors)
            else:
                auc = -report.total  # fallback: prefer the lowest loss
            if auc > best_auc:
                best_auc, best_epoch = auc, epoch
                save_checkpoint(ckpt_path, net.state_arrays())
            if progress:
                progress(epoch, report, auc)

    net_cfg.save(config_path)
    if best_epoch < 0:  # no val split and nothing saved yet
        save_checkpoint(ckpt_path, net.state_arrays())
    return TrainResult(ckpt_path, config_path, log_path, best_auc, best_epoch,
                       step)


# ------------------------------------------------------------ proposal flow

@dataclass
class PipelineOutput:
    proposals: dict   # video_id -> [ScoredInterval] (post soft-nms, top-k)
    actionness: dict  # video_id -> np.ndarray (T,)


def generate_proposals(net: RapNet, records, anchors: AnchorSet,
                       adjust: bool = True, rank: bool = False, ranker=None,
                       blend: float = 0.5, match_thresh: float = 0.5,
                       sigma: float = 0.5, min_score: float = 1e-4,
                       top_k: int = 100, overlap_thresh: float = 0.65,
                       apply_nms: bool = True) -> PipelineOutput:
    """Decode, optionally adjust against grouped actionness, optionally
    rank, then suppress; parallel across videos under RAPNET_THREADS."""
    net.set_training(False)
    cfg = net.cfg

    def per_video(rec):
        res = net.forward(rec.features)
        boxes, scores = decode_numpy(res.prediction, anchors, cfg.T)
        props = [ScoredInterval(float(s), float(e), float(sc))
                 for (s, e), sc in zip(boxes, scores)]
        p_a = res.actionness.data
        if adjust:
            props = adjust_boundaries(props, tag_group(p_a), blend, match_thresh)
        if rank and ranker is not None:
            props = rank_proposals(props, p_a, ranker)
        if apply_nms:
            props = soft_nms(props, sigma, min_score, top_k, overlap_thresh)
        return props, p_a

    with T.no_grad():
        results = parallel_map(per_video, records)
    return PipelineOutput(
        proposals={r.video_id: p for r, (p, _) in zip(records, results)},
        actionness={r.video_id: a for r, (_, a) in zip(records, results)})


def validation_auc(net: RapNet, records, anchors: AnchorSet,
                   style: str = "anet") -> float:
    out = generate_proposals(net, records, anchors, adjust=False, rank=False)
    gts = {r.video_id: r.segments for r in records}
    return build_curve(out.proposals, gts, style=style).auc


# ------------------------------------------------------------- stage-2 rank

def train_ranker(net: RapNet, records, anchors: AnchorSet, seed: int = 0,
                 epochs: int = 10, lr: float = 0.1, batch_size: int = 32,
                 per_video: int = 50) -> RankerNet:
    """Fit the overlap estimator on adjusted train-split proposals.

    Targets are each proposal's best IoU with the video's ground truths.
    To keep the sample count tractable the top half by score plus a random
    half of each video's proposals are used.
    """
    out = generate_proposals(net, records, anchors, adjust=True, rank=False,
                             apply_nms=False)
    rng = np.random.default_rng(seed)
    feats, targets = [], []
    for rec in records:
        props = out.proposals[rec.video_id]
        p_a = out.actionness[rec.video_id]
        by_score = sorted(range(len(props)),
                          key=lambda i: (-props[i].score, props[i].start,
                                         props[i].end))
        n_top = min(per_video // 2, len(props))
        chosen = list(by_score[:n_top])
        rest = by_score[n_top:]
        if rest:
            extra = rng.choice(len(rest), size=min(per_video - n_top, len(rest)),
                               replace=False)
            chosen += [rest[i] for i in extra]
        gt = np.asarray(rec.segments, dtype=np.float64).reshape(-1, 2)
        for i in chosen:
            p = props[i]
            best = float(iou_matrix(gt, np.array([[p.start, p.end]])).max()) \
                if gt.size else 0.0
            feats.append(proposal_feature(p_a, p.start, p.end))
            targets.append(best)

    ranker = RankerNet(seed=seed)
    opt = SGD(ranker.parameters(), momentum=0.9)
    n = len(feats)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            ranker.zero_grad()
            loss = T.tensor(0.0)
            for i in idx:
                pred = ranker.forward(feats[i])
                loss = loss + (pred - targets[i]).smooth_l1()
            loss = loss * (1.0 / len(idx))
            T.backward(loss)
            opt.step(lr)
    return ranker
