"""Synthetic feature sequences with planted action segments, the annotation
and feature-binary formats, and temporal rescaling."""

from __future__ import annotations

import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

FEATURE_MAGIC = b"RAPF"

WIDTH_CLASSES = ((0.05, 0.10), (0.15, 0.30), (0.40, 0.70))
MIN_GAP = 0.02


@dataclass
class VideoRecord:
    video_id: str
    features: np.ndarray           # (T, C) float64
    segments: list = field(default_factory=list)  # [(start, end)] normalized
    split: str = "train"


def _sample_segments(rng: np.random.Generator):
    """1-3 disjoint segments; widths from the short/medium/long mixture.

    Width values are redrawn within their classes until they pack (so the
    class histogram stays on the mixture); 100 failed draws regenerate the
    video. Placement spreads the leftover span across the gaps, which always
    succeeds once the widths fit.
    """
    while True:
        n_seg = int(rng.integers(1, 4))
        classes = rng.integers(0, 3, size=n_seg)
        cap = 1.0 - (n_seg - 1) * MIN_GAP
        widths = None
        for _ in range(100):
            draw = [float(rng.uniform(*WIDTH_CLASSES[c])) for c in classes]
            if sum(draw) <= cap:
                widths = draw
                break
        if widths is None:
            continue  # infeasible class combination; regenerate the video
        free = cap - sum(widths)
        spacing = rng.uniform(size=n_seg + 1)
        spacing = spacing / spacing.sum() * free
        segs = []
        cursor = float(spacing[0])
        for w, extra in zip(widths, spacing[1:]):
            segs.append((cursor, cursor + w))
            cursor += w + MIN_GAP + float(extra)
        return segs


def _snippet_labels(segments, t: int) -> np.ndarray:
    centers = (np.arange(t) + 0.5) / t
    fg = np.zeros(t, dtype=bool)
    for s, e in segments:
        fg |= (centers >= s) & (centers <= e)
    return fg


def synth_dataset(num_videos: int, t: int, c: int, seed: int,
                  difficulty: float, val_fraction: float = 0.2) -> list:
    """Deterministic synthetic corpus.

    Channel 0 separates foreground from background: background snippets draw
    from U(-1, 0), foreground from a unit-width window shifted down by
    0.25 * difficulty, so difficulty 0 gives disjoint supports (per-snippet
    linearly separable) and larger difficulty overlaps them. The remaining
    channels are temporally smoothed low-variance distractors, like the
    encoder features they stand in for. The last `val_fraction` of videos
    form the val split.
    """
    if not 0.0 <= difficulty <= 1.0:
        raise ValueError("difficulty must be in [0, 1]")
    rng = np.random.default_rng(seed)
    n_val = int(round(num_videos * val_fraction))
    records = []
    for v in range(num_videos):
        segments = _sample_segments(rng)
        raw = rng.standard_normal((t + 2, c)) * 0.3
        feats = (raw[:-2] + 2.0 * raw[1:-1] + raw[2:]) / 4.0
        fg = _snippet_labels(segments, t)
        ch0 = rng.uniform(-1.0, 0.0, size=t)
        shift = -0.25 * difficulty
        ch0[fg] = rng.uniform(shift, 1.0 + shift, size=int(fg.sum()))
        feats[:, 0] = ch0
        split = "val" if v >= num_videos - n_val else "train"
        records.append(VideoRecord(f"v{v:05d}", feats, segments, split))
    return records


# ------------------------------------------------------------------ file IO

def save_features(path, features: np.ndarray) -> None:
    """RAPF binary: magic, u32 T', u32 C, little-endian f32 row-major."""
    arr = np.asarray(features)
    if arr.ndim != 2:
        raise ValueError("features must be 2-D (T', C)")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(4) != FEATURE_MAGIC:
            raise ValueError(f"{path}: not a feature file (bad magic)")
        t, c = struct.unpack("<II", fh.read(8))
        payload = fh.read(4 * t * c)
        if len(payload) != 4 * t * c:
            raise ValueError(f"{path}: truncated feature payload")
    return np.frombuffer(payload, dtype="<f4").reshape(t, c).astype(np.float64)


def save_annotations(path, records) -> None:
    obj = {"videos": [
        {"id": r.video_id,
         "segments": [[float(s), float(e)] for s, e in r.segments],
         "split": r.split}
        for r in records]}
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def load_annotations(path) -> list:
    with open(path) as fh:
        obj = json.load(fh)
    out = []
    for v in obj["videos"]:
        segs = [(float(s), float(e)) for s, e in v["segments"]]
        for s, e in segs:
            if not (0.0 <= s < e <= 1.0):
                raise ValueError(f"{v['id']}: degenerate segment [{s}, {e}]")
        out.append(VideoRecord(v["id"], None, segs, v["split"]))
    return out


def write_dataset(out_dir, records) -> None:
    os.makedirs(os.path.join(out_dir, "features"), exist_ok=True)
    save_annotations(os.path.join(out_dir, "annotations.json"), records)
    for r in records:
        save_features(os.path.join(out_dir, "features", f"{r.video_id}.rapf"),
                      r.features)


def load_dataset(data_dir, t: int | None = None, split: str | None = None) -> list:
    """Read annotations plus features, rescaling each sequence to length t."""
    records = load_annotations(os.path.join(data_dir, "annotations.json"))
    if split is not None:
        records = [r for r in records if r.split == split]
    for r in records:
        feats = load_features(
            os.path.join(data_dir, "features", f"{r.video_id}.rapf"))
        r.features = rescale_features(feats, t) if t is not None else feats
    return records


# ----------------------------------------------------------------- rescale

def rescale_features(raw: np.ndarray, t: int) -> np.ndarray:
    """Linear interpolation along time to length t; sample positions span the
    full input range so an equal-length rescale is the identity."""
    raw = np.asarray(raw, dtype=np.float64)
    t_in = raw.shape[0]
    if t_in == t:
        return raw.copy()
    if t_in == 1:
        return np.repeat(raw, t, axis=0)
    pos = np.arange(t) * ((t_in - 1) / (t - 1)) if t > 1 else np.zeros(1)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, t_in - 1)
    frac = (pos - i0)[:, None]
    return raw[i0] * (1.0 - frac) + raw[i1] * frac


# ------------------------------------------------------- proposal CSV files

PROPOSAL_HEADER = "video_id,start,end,score"


def write_proposal_csv(path, props_by_video: dict) -> None:
    """Six decimal places, per-video descending score (ties by interval)."""
    with open(path, "w") as fh:
        fh.write(PROPOSAL_HEADER + "\n")
        for vid, props in props_by_video.items():
            rows = sorted(((float(p.start), float(p.end), float(p.score))
                           for p in props), key=lambda r: (-r[2], r[0], r[1]))
            for s, e, sc in rows:
                fh.write(f"{vid},{s:.6f},{e:.6f},{sc:.6f}\n")


def read_proposal_csv(path) -> dict:
    props = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line == PROPOSAL_HEADER:
                continue
            vid, s, e, sc = line.split(",")
            props.setdefault(vid, []).append((float(s), float(e), float(sc)))
    return props


# ------------------------------------------------------------- parallelism

def max_threads() -> int:
    raw = os.environ.get("RAPNET_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Order-preserving map, fanned out over RAPNET_THREADS threads."""
    items = list(items)
    workers = min(max_threads(), max(len(items), 1))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
