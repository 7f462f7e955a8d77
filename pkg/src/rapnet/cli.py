"""Command-line surface: synth-data, cluster-anchors, train, propose, eval."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .anchors import AnchorSet
from .checkpoint import load_checkpoint
from .data import (load_annotations, load_dataset, read_proposal_csv,
                   synth_dataset, write_dataset, write_proposal_csv)
from .evalkit import build_curve
from .network import NetworkConfig, RapNet
from .train import TrainConfig, generate_proposals, train, train_ranker


def _add_arch_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="network config JSON (T, C, N, M, r, "
                                    "raw_affinity, use_ram)")
    p.add_argument("--depth", type=int, help="pyramid depth N")
    p.add_argument("--anchors-per-cell", type=int, help="anchors per cell M")
    p.add_argument("--no-ram", action="store_true",
                   help="replace every relation module with identity")
    p.add_argument("--raw-affinity", action="store_true",
                   help="skip softmax normalization of affinity rows")
    p.add_argument("--length", type=int, help="input length T")
    p.add_argument("--channels", type=int, help="feature channels C")


def _net_config(args) -> NetworkConfig:
    base = NetworkConfig.load(args.config) if args.config else NetworkConfig()
    obj = base.to_json()
    if args.depth is not None:
        obj["N"] = args.depth
    if args.anchors_per_cell is not None:
        obj["M"] = args.anchors_per_cell
    if getattr(args, "length", None) is not None:
        obj["T"] = args.length
    if getattr(args, "channels", None) is not None:
        obj["C"] = args.channels
    if args.no_ram:
        obj["use_ram"] = False
    if args.raw_affinity:
        obj["raw_affinity"] = True
    return NetworkConfig.from_json(obj)


def cmd_synth_data(args) -> int:
    records = synth_dataset(args.videos, args.length, args.channels,
                            args.seed, args.difficulty, args.val_fraction)
    write_dataset(args.out, records)
    n_val = sum(1 for r in records if r.split == "val")
    print(f"wrote {len(records)} videos ({len(records) - n_val} train / "
          f"{n_val} val) to {args.out}")
    return 0


def cmd_cluster_anchors(args) -> int:
    records = load_annotations(args.annotations)
    widths = [e - s for r in records if r.split == "train"
              for s, e in r.segments]
    anchors = AnchorSet.from_durations(widths, args.depth,
                                       args.anchors_per_cell, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump(anchors.to_json(), fh, indent=2)
        fh.write("\n")
    print(f"clustered {len(widths)} durations into "
          f"{args.depth}x{args.anchors_per_cell} anchors -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _net_config(args)
    train_cfg = TrainConfig(batch_size=args.batch_size, base_lr=args.lr,
                            epochs=args.epochs, warmup_epochs=args.warmup,
                            seed=args.seed)
    with open(args.anchors) as fh:
        anchors = AnchorSet.from_json(json.load(fh))
    records = load_dataset(args.data, t=cfg.T)

    def progress(epoch, report, auc):
        print(f"epoch {epoch:3d}  loss {report.total:8.4f}  val AUC {auc:6.2f}")

    result = train(cfg, train_cfg, records, anchors, args.out,
                   progress=progress if not args.quiet else None)
    print(f"best val AUC {result.best_auc:.2f} at epoch {result.best_epoch}; "
          f"checkpoint {result.checkpoint_path}")
    return 0


def cmd_propose(args) -> int:
    cfg = NetworkConfig.load(args.config)
    with open(args.anchors) as fh:
        anchors = AnchorSet.from_json(json.load(fh))
    net = RapNet(cfg, seed=0)
    net.load_state_arrays(load_checkpoint(args.checkpoint))
    records = load_dataset(args.data, t=cfg.T)
    target = [r for r in records if r.split == args.split]
    if not target:
        print(f"no videos in split {args.split!r}", file=sys.stderr)
        return 1
    ranker = None
    if not args.no_rank:
        train_recs = [r for r in records if r.split == "train"]
        ranker = train_ranker(net, train_recs, anchors, seed=args.seed)
    out = generate_proposals(net, target, anchors, adjust=not args.no_adjust,
                             rank=not args.no_rank, ranker=ranker)
    write_proposal_csv(args.out, out.proposals)
    total = sum(len(v) for v in out.proposals.values())
    print(f"wrote {total} proposals for {len(target)} videos to {args.out}")
    return 0


def cmd_eval(args) -> int:
    props = read_proposal_csv(args.proposals)
    records = load_annotations(args.annotations)
    gts = {r.video_id: r.segments for r in records if r.split == args.split}
    curve = build_curve(props, gts, style=args.style,
                        strict_anet=args.tiou_max == 0.90)
    with open(args.out, "w") as fh:
        json.dump(curve.to_json(), fh, indent=2)
        fh.write("\n")
    table = curve.table()
    print(table)
    if args.table:
        with open(args.table, "w") as fh:
            fh.write(table + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rapnet",
        description="Temporal action proposal generation on feature sequences")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=250)
    p.add_argument("--length", type=int, default=64)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--difficulty", type=float, default=0.3)
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("cluster-anchors", help="k-means anchor widths")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--anchors-per-cell", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_cluster_anchors)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=18)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=0.005)
    p.add_argument("--warmup", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")
    _add_arch_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("propose", help="generate proposal CSV from a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--out", required=True)
    p.add_argument("--no-adjust", action="store_true",
                   help="skip boundary adjustment against grouped actionness")
    p.add_argument("--no-rank", action="store_true",
                   help="skip proposal-level ranking")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_propose)

    p = sub.add_parser("eval", help="AR@AN / AUC of a proposal CSV")
    p.add_argument("--proposals", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--style", choices=("anet", "thumos"), default="anet")
    p.add_argument("--tiou-max", type=float, choices=(0.90, 0.95), default=0.95)
    p.add_argument("--out", required=True)
    p.add_argument("--table")
    p.set_defaults(fn=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
