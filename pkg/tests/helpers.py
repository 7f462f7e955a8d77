"""Shared test oracles: finite-difference gradient checks and small
brute-force references."""

import numpy as np

from rapnet import tensor as T


def numeric_grad(make_loss, param, coord, h=1e-5):
    """Central difference of make_loss() w.r.t. one coordinate of param."""
    orig = param.data[coord]
    param.data[coord] = orig + h
    hi = make_loss().item()
    param.data[coord] = orig - h
    lo = make_loss().item()
    param.data[coord] = orig
    return (hi - lo) / (2 * h)


def gradcheck(make_loss, params, rtol, atol=1e-8, h=1e-5, n_coords=6, seed=0):
    """Compare analytic gradients of a re-runnable scalar loss against
    central differences on sampled coordinates of each parameter.

    Fails unless |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|)
    everywhere; returns the number of coordinates checked.
    """
    rng = np.random.default_rng(seed)
    loss = make_loss()
    T.backward(loss)
    analytic = [None if p.grad is None else p.grad.copy() for p in params]
    checked = 0
    for p, g in zip(params, analytic):
        assert g is not None, "parameter received no gradient"
        flat_coords = rng.choice(p.data.size, size=min(n_coords, p.data.size),
                                 replace=False)
        for fc in flat_coords:
            coord = np.unravel_index(int(fc), p.data.shape)
            num = numeric_grad(make_loss, p, coord, h=h)
            ana = float(g[coord])
            err = abs(ana - num)
            tol = atol + rtol * max(abs(ana), abs(num))
            assert err <= tol, (
                f"grad mismatch at {coord}: analytic {ana:.10g} vs numeric "
                f"{num:.10g} (err {err:.3g} > tol {tol:.3g})")
            checked += 1
    return checked


def directional_gradcheck(make_loss, params, h=1e-5, seed=0):
    """Directional derivative along one random unit direction spanning every
    parameter; returns (analytic, numeric)."""
    rng = np.random.default_rng(seed)
    dirs = [rng.standard_normal(p.data.shape) for p in params]
    norm = np.sqrt(sum((d * d).sum() for d in dirs))
    dirs = [d / norm for d in dirs]

    loss = make_loss()
    T.backward(loss)
    analytic = sum(float((p.grad * d).sum()) for p, d in zip(params, dirs)
                   if p.grad is not None)

    originals = [p.data.copy() for p in params]
    for p, d, o in zip(params, dirs, originals):
        p.data = o + h * d
    hi = make_loss().item()
    for p, d, o in zip(params, dirs, originals):
        p.data = o - h * d
    lo = make_loss().item()
    for p, o in zip(params, originals):
        p.data = o
    return analytic, (hi - lo) / (2 * h)


def brute_union_length(intervals) -> float:
    """Total measure of a union of intervals via sweep merging."""
    ivs = sorted((float(s), float(e)) for s, e in intervals)
    total, cur_s, cur_e = 0.0, None, None
    for s, e in ivs:
        if cur_s is None:
            cur_s, cur_e = s, e
        elif s <= cur_e:
            cur_e = max(cur_e, e)
        else:
            total += cur_e - cur_s
            cur_s, cur_e = s, e
    if cur_s is not None:
        total += cur_e - cur_s
    return total


def brute_iou(a, b) -> float:
    """IoU via measure arithmetic on the merged union (independent of the
    min/max formula in the library)."""
    la = a[1] - a[0]
    lb = b[1] - b[0]
    union = brute_union_length([a, b])
    inter = la + lb - union
    return inter / union if union > 0 else 0.0
