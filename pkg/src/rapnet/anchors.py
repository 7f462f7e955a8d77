"""Anchor width clustering and label assignment for both network branches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def iou(a, b) -> float:
    """Temporal intersection-over-union of two [start, end] intervals."""
    a_s, a_e = float(a[0]), float(a[1])
    b_s, b_e = float(b[0]), float(b[1])
    if a_s > a_e or b_s > b_e:
        raise ValueError(f"inverted interval: {a} vs {b}")
    inter = min(a_e, b_e) - max(a_s, b_s)
    if inter <= 0.0:
        return 0.0
    union = (a_e - a_s) + (b_e - b_s) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of interval arrays a (G, 2) and b (A, 2) -> (G, A)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        return np.zeros((a.shape[0], b.shape[0]))
    inter = (np.minimum(a[:, None, 1], b[None, :, 1])
             - np.maximum(a[:, None, 0], b[None, :, 0]))
    inter = np.maximum(inter, 0.0)
    union = ((a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter)
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def cluster_anchors(widths, k: int, seed: int = 0, max_iter: int = 300) -> np.ndarray:
    """1-D Lloyd k-means over normalized durations; centers sorted ascending.

    Seeding is k-means++ style; a cluster that empties is reseeded to the
    point farthest from its assigned center, so duplicate-heavy inputs still
    converge.
    """
    data = np.asarray(sorted(float(w) for w in widths), dtype=np.float64)
    if data.size < k:
        raise ValueError(f"need at least {k} samples to cluster, got {data.size}")
    rng = np.random.default_rng(seed)

    centers = np.empty(k)
    centers[0] = data[rng.integers(data.size)]
    for i in range(1, k):
        d2 = np.min((data[:, None] - centers[None, :i]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0:
            centers[i] = data[rng.integers(data.size)]
        else:
            centers[i] = data[rng.choice(data.size, p=d2 / total)]

    assign = np.full(data.size, -1)
    for _ in range(max_iter):
        dist = np.abs(data[:, None] - centers[None, :])
        new_assign = np.argmin(dist, axis=1)
        dist_to_own = dist[np.arange(data.size), new_assign].copy()
        for c in range(k):
            sel = new_assign == c
            if sel.any():
                centers[c] = data[sel].mean()
            else:
                # reseed to the point farthest from its assigned center
                far = int(np.argmax(dist_to_own))
                centers[c] = data[far]
                new_assign[far] = c
                dist_to_own[far] = -1.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return np.sort(centers)


@dataclass
class AnchorSet:
    """N x M anchor widths, ascending in (level, slot) order: the finest grid
    (level 0) takes the narrowest widths."""

    widths: np.ndarray  # (N, M)

    def __post_init__(self):
        self.widths = np.asarray(self.widths, dtype=np.float64)

    @property
    def levels(self) -> int:
        return self.widths.shape[0]

    @property
    def per_cell(self) -> int:
        return self.widths.shape[1]

    @classmethod
    def from_durations(cls, durations, levels: int, per_cell: int,
                       seed: int = 0) -> "AnchorSet":
        centers = cluster_anchors(durations, levels * per_cell, seed=seed)
        return cls(centers.reshape(levels, per_cell))

    def to_json(self) -> dict:
        return {"N": self.levels, "M": self.per_cell,
                "widths": [[float(w) for w in row] for row in self.widths]}

    @classmethod
    def from_json(cls, obj: dict) -> "AnchorSet":
        w = np.asarray(obj["widths"], dtype=np.float64)
        if w.shape != (obj["N"], obj["M"]):
            raise ValueError(f"anchor widths shape {w.shape} != "
                             f"(N={obj['N']}, M={obj['M']})")
        return cls(w)


class AnchorLayout:
    """Flat enumeration of every (level, cell, slot) anchor instance for a
    fixed input length, ordered level-major then cell then slot. That order
    doubles as the assignment tie-break: finer level, lower cell, lower slot.
    """

    def __init__(self, anchors: AnchorSet, t: int):
        self.anchors = anchors
        self.t = t
        levels, per_cell = anchors.levels, anchors.per_cell
        lv, cell, slot, width = [], [], [], []
        self.level_sizes = []
        for i in range(levels):
            t_i = t // (2 ** i)
            self.level_sizes.append(t_i)
            for j in range(t_i):
                for m in range(per_cell):
                    lv.append(i)
                    cell.append(j)
                    slot.append(m)
                    width.append(anchors.widths[i, m])
        self.level = np.asarray(lv)
        self.cell = np.asarray(cell)
        self.slot = np.asarray(slot)
        self.width = np.asarray(width, dtype=np.float64)
        self.scale = (t // (2 ** self.level)).astype(np.float64)  # cells per level
        center = (self.cell + 0.5) / self.scale
        self.default_boxes = np.stack(
            [center - self.width / 2, center + self.width / 2], axis=1)
        self.total = len(self.level)
        # flat offset of each level's first instance
        self.level_offset = np.concatenate(
            [[0], np.cumsum(np.asarray(self.level_sizes) * per_cell)])

    def level_view(self, flat: np.ndarray, level: int) -> np.ndarray:
        """Reshape one level's slice of a flat per-instance array to (T_i, M)."""
        lo, hi = self.level_offset[level], self.level_offset[level + 1]
        return flat[lo:hi].reshape(self.level_sizes[level], self.anchors.per_cell)


@dataclass
class AssignmentResult:
    """Per-instance labels over an AnchorLayout: exactly one positive per
    ground truth, negatives elsewhere, with screened negatives ignored."""

    layout: AnchorLayout
    pos_mask: np.ndarray          # (total,) bool
    neg_mask: np.ndarray          # (total,) bool
    ignored_mask: np.ndarray      # (total,) bool
    center_target: np.ndarray     # (total,) p_c at positives, 0 elsewhere
    logwidth_target: np.ndarray   # (total,) p_w at positives, 0 elsewhere
    gt_boxes: np.ndarray          # (total, 2) matched interval, [0, 1] dummy elsewhere
    matches: list = field(default_factory=list)  # (gt_index, flat_instance)

    @property
    def n_pos(self) -> int:
        return int(self.pos_mask.sum())

    @property
    def n_neg(self) -> int:
        return int(self.neg_mask.sum())


def assign_proposal_labels(gts, layout: AnchorLayout, decoded_boxes=None,
                           iou_screen: float = 0.5) -> AssignmentResult:
    """Greedy unique matching of ground truths to anchor instances.

    Each ground truth (widest first) claims the unclaimed instance whose
    default box has the highest IoU with it. Remaining instances are
    negative unless their decoded prediction overlaps any ground truth with
    IoU above `iou_screen`, in which case they are ignored.
    """
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    total = layout.total
    pos = np.zeros(total, dtype=bool)
    center_t = np.zeros(total)
    logwidth_t = np.zeros(total)
    gt_boxes = np.tile(np.array([0.0, 1.0]), (total, 1))
    matches = []

    if gts.shape[0]:
        overlaps = iou_matrix(gts, layout.default_boxes)
        order = np.argsort(-(gts[:, 1] - gts[:, 0]), kind="stable")
        claimed = np.zeros(total, dtype=bool)
        for g in order:
            row = np.where(claimed, -1.0, overlaps[g])
            a = int(np.argmax(row))  # first max = finest level, lowest cell/slot
            if row[a] < 0:
                continue  # more ground truths than anchors; desk configs never hit this
            claimed[a] = pos[a] = True
            g_c = (gts[g, 0] + gts[g, 1]) / 2
            g_w = gts[g, 1] - gts[g, 0]
            center_t[a] = g_c * layout.scale[a] - layout.cell[a]
            logwidth_t[a] = np.log(g_w / layout.width[a])
            gt_boxes[a] = gts[g]
            matches.append((int(g), a))

    ignored = np.zeros(total, dtype=bool)
    if gts.shape[0] and decoded_boxes is not None:
        pred_best = iou_matrix(gts, decoded_boxes).max(axis=0)
        ignored = (~pos) & (pred_best > iou_screen)
    neg = ~(pos | ignored)
    return AssignmentResult(layout, pos, neg, ignored, center_t, logwidth_t,
                            gt_boxes, matches)


def assign_actionness_labels(gts, t: int, eta: float = 0.1) -> np.ndarray:
    """Binary snippet labels: 1 where the snippet center falls inside any
    ground-truth interval expanded by eta times its duration on both sides."""
    labels = np.zeros(t)
    centers = (np.arange(t) + 0.5) / t
    for s, e in gts:
        d = e - s
        lo = max(0.0, s - d * eta)
        hi = min(1.0, e + d * eta)
        labels[(centers >= lo) & (centers <= hi)] = 1.0
    return labels
