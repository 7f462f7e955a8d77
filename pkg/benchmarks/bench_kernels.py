#!/usr/bin/env python3
"""Compare the compiled conv kernels with the numpy fallback, plus a full
train-step timing at the desk-scale configuration.

Run:  python3 benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from rapnet.backend import np_conv1d_backward, np_conv1d_forward

try:
    from rapnet import _convops
except ImportError:
    _convops = None


def time_fn(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_convs(repeats):
    shapes = [
        # (c_in, c_out, t, k, stride)
        (16, 16, 64, 3, 1),
        (16, 16, 64, 3, 2),
        (16, 64, 256, 3, 1),
        (64, 64, 256, 3, 1),
        (256, 256, 128, 3, 1),
    ]
    rng = np.random.default_rng(0)
    print(f"{'shape':>28}  {'numpy fwd':>10}  {'ext fwd':>10}  {'fwd x':>6}"
          f"  {'numpy bwd':>10}  {'ext bwd':>10}  {'bwd x':>6}")
    for c_in, c_out, t, k, stride in shapes:
        x = rng.standard_normal((c_in, t))
        w = rng.standard_normal((c_out, c_in, k))
        pad = k // 2
        gy = np_conv1d_forward(x, w, stride, pad)
        nf = time_fn(lambda: np_conv1d_forward(x, w, stride, pad), repeats)
        nb = time_fn(lambda: np_conv1d_backward(x, w, gy, stride, pad), repeats)
        label = f"{c_in}x{t} -> {c_out} k{k} s{stride}"
        if _convops is None:
            print(f"{label:>28}  {nf * 1e6:9.1f}u  {'-':>10}  {'-':>6}"
                  f"  {nb * 1e6:9.1f}u  {'-':>10}  {'-':>6}")
            continue
        ef = time_fn(lambda: _convops.conv1d_forward(x, w, stride, pad), repeats)
        eb = time_fn(lambda: _convops.conv1d_backward(x, w, gy, stride, pad),
                     repeats)
        print(f"{label:>28}  {nf * 1e6:9.1f}u  {ef * 1e6:9.1f}u  {nf / ef:5.1f}x"
              f"  {nb * 1e6:9.1f}u  {eb * 1e6:9.1f}u  {nb / eb:5.1f}x")


def bench_train_step(repeats):
    from rapnet.anchors import AnchorSet
    from rapnet.data import synth_dataset
    from rapnet.losses import LossConfig, l2_penalty, total_loss
    from rapnet.network import NetworkConfig, RapNet, layout_for
    from rapnet.train import SGD, TrainConfig, video_losses
    from rapnet import tensor as T

    cfg = NetworkConfig()  # desk scale: T=64, C=16, N=4, M=2
    records = synth_dataset(4, cfg.T, cfg.C, seed=0, difficulty=0.3,
                            val_fraction=0.0)
    anchors = AnchorSet(np.linspace(0.06, 0.6, cfg.N * cfg.M)
                        .reshape(cfg.N, cfg.M))
    layout = layout_for(cfg, anchors)
    net = RapNet(cfg, seed=0)
    opt = SGD(net.parameters())
    loss_cfg = LossConfig()
    train_cfg = TrainConfig()

    def step():
        net.zero_grad()
        acc_parts, acc_act = None, None
        for rec in records:
            parts, act = video_losses(net, rec, layout, loss_cfg, train_cfg)
            if acc_parts is None:
                acc_parts, acc_act = parts, act
            else:
                acc_parts = {k: acc_parts[k] + parts[k] for k in parts}
                acc_act = acc_act + act
        total, _ = total_loss({k: v * 0.25 for k, v in acc_parts.items()},
                              acc_act * 0.25, l2_penalty(net), loss_cfg)
        T.backward(total)
        opt.step(1e-3)

    per = time_fn(step, max(3, repeats // 10))
    print(f"\nfull train step, 4 videos at T={cfg.T} C={cfg.C} N={cfg.N}: "
          f"{per * 1e3:.1f} ms ({per * 1e3 / 4:.1f} ms/video)")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=30)
    args = ap.parse_args()
    backend = "ext" if _convops is not None else "python (extension not built)"
    print(f"active compiled backend: {backend}\n")
    bench_convs(args.repeats)
    bench_train_step(args.repeats)


if __name__ == "__main__":
    main()
