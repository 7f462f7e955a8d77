"""Average-recall evaluation: AR@AN across tIoU thresholds and its AUC."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ANET_TIOUS = tuple(0.5 + 0.05 * i for i in range(10))      # 0.50 .. 0.95
ANET_TIOUS_STRICT = tuple(0.5 + 0.05 * i for i in range(9))  # 0.50 .. 0.90
THUMOS_TIOUS = tuple(0.5 + 0.05 * i for i in range(11))    # 0.50 .. 1.00


def _sort_key(p):
    return (-p[2], p[0], p[1])


def _as_triples(props):
    """Accept ScoredInterval-likes or (start, end, score) triples."""
    out = []
    for p in props:
        if hasattr(p, "score"):
            out.append((float(p.start), float(p.end), float(p.score)))
        else:
            s, e, sc = p
            out.append((float(s), float(e), float(sc)))
    return sorted(out, key=_sort_key)


def match_ranks(props, gts, tiou: float):
    """Greedy one-to-one matching in score order.

    Returns, for each ground truth, the 1-based rank of the proposal that
    recalls it (or None). Each proposal consumes at most one ground truth:
    the unmatched one it overlaps most, provided IoU >= tiou. Prefix
    consistency makes recall@AN a simple rank threshold.
    """
    ranks = [None] * len(gts)
    if not gts:
        return ranks
    g = np.asarray(gts, dtype=np.float64)
    taken = np.zeros(len(gts), dtype=bool)
    for rank, (s, e, _) in enumerate(props, start=1):
        inter = np.maximum(np.minimum(g[:, 1], e) - np.maximum(g[:, 0], s), 0.0)
        union = (g[:, 1] - g[:, 0]) + (e - s) - inter
        overlap = np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)
        overlap[taken] = -1.0
        best = int(np.argmax(overlap))
        if overlap[best] >= tiou:
            taken[best] = True
            ranks[best] = rank
        if taken.all():
            break
    return ranks


def recall_at(props_by_video: dict, gts_by_video: dict, tiou: float,
              an: int) -> float:
    """Fraction of ground truths recalled when keeping the top `an` proposals
    per video. Raises when the split has no ground truths at all."""
    total = sum(len(g) for g in gts_by_video.values())
    if total == 0:
        raise ValueError("recall is undefined: no ground truths in the split")
    an = int(an)
    hit = 0
    for vid, gts in gts_by_video.items():
        props = _as_triples(props_by_video.get(vid, []))[:an]
        ranks = match_ranks(props, gts, tiou)
        hit += sum(1 for r in ranks if r is not None)
    return hit / total


@dataclass
class EvalCurve:
    tiou_thresholds: tuple
    an_values: np.ndarray          # 1..100
    recall: np.ndarray             # (tiou, an)
    average_recall: np.ndarray     # (an,)
    auc: float                     # percentage

    def to_json(self) -> dict:
        return {
            "auc": self.auc,
            "ar": {str(int(an)): float(v)
                   for an, v in zip(self.an_values, self.average_recall)},
            "recall": {
                f"{tiou:.2f}": {str(int(an)): float(v)
                                for an, v in zip(self.an_values, row)}
                for tiou, row in zip(self.tiou_thresholds, self.recall)
            },
        }

    def ar_at(self, an: int) -> float:
        return float(self.average_recall[int(an) - 1])

    def table(self) -> str:
        lines = ["metric          value",
                 "--------------  ------"]
        for an in (1, 5, 10, 100):
            if an <= len(self.an_values):
                lines.append(f"AR@{an:<3d}          {100 * self.ar_at(an):6.2f}")
        lines.append(f"AUC             {self.auc:6.2f}")
        return "\n".join(lines)


def tiou_grid(style: str = "anet", strict_anet: bool = False):
    if style == "anet":
        return ANET_TIOUS_STRICT if strict_anet else ANET_TIOUS
    if style == "thumos":
        return THUMOS_TIOUS
    raise ValueError(f"unknown dataset style {style!r}")


def build_curve(props_by_video: dict, gts_by_video: dict, style: str = "anet",
                strict_anet: bool = False, an_max: int = 100) -> EvalCurve:
    """Recall over the (tIoU, AN) grid, AR@AN, and AUC (mean AR over
    AN = 1..an_max, times 100)."""
    tious = tiou_grid(style, strict_anet)
    total = sum(len(g) for g in gts_by_video.values())
    if total == 0:
        raise ValueError("evaluation is undefined: no ground truths in the split")
    an_values = np.arange(1, an_max + 1)
    recall = np.zeros((len(tious), an_max))
    for vid, gts in gts_by_video.items():
        if not gts:
            continue
        props = _as_triples(props_by_video.get(vid, []))
        for ti, tiou in enumerate(tious):
            ranks = match_ranks(props, gts, tiou)
            for r in ranks:
                if r is not None and r <= an_max:
                    recall[ti, r - 1:] += 1
    recall /= total
    average_recall = recall.mean(axis=0)
    return EvalCurve(tuple(tious), an_values, recall, average_recall,
                     float(average_recall.mean() * 100.0))
