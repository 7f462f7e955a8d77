"""Grouping, boundary blending, ranking, suppression."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rapnet.anchors import iou
from rapnet.postprocess import (FEATURE_POINTS, RankerNet, ScoredInterval,
                                adjust_boundaries, proposal_feature,
                                rank_proposals, soft_nms, tag_group)


def si(s, e, score, source="rap"):
    return ScoredInterval(s, e, score, source)


# -------------------------------------------------------------------- tag

def test_tag_group_runs():
    p_a = np.array([0.9, 0.9, 0.1, 0.9])
    props = tag_group(p_a, thresholds=[0.5])
    boxes = sorted(p.box() for p in props)
    assert boxes == [(0.0, 0.5), (0.75, 1.0)]
    assert all(p.source == "tag" for p in props)


def test_tag_group_scores_are_mean_actionness():
    p_a = np.array([0.8, 0.6, 0.1, 0.9])
    props = {p.box(): p.score for p in tag_group(p_a, thresholds=[0.5])}
    assert props[(0.0, 0.5)] == pytest.approx(0.7)
    assert props[(0.75, 1.0)] == pytest.approx(0.9)


def test_tag_group_empty_and_full():
    assert tag_group(np.zeros(8)) == []
    props = tag_group(np.ones(8) * 0.95)
    assert len(props) == 1  # one run per threshold, deduplicated
    assert props[0].box() == (0.0, 1.0)


def test_tag_group_distinct_positive_length():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p_a = rng.uniform(0, 1, 32)
        props = tag_group(p_a)
        boxes = [p.box() for p in props]
        assert len(set(boxes)) == len(boxes)
        assert all(e > s for s, e in boxes)


# ----------------------------------------------------------------- adjust

def test_adjust_r0_is_identity():
    rap = [si(0.1, 0.4, 0.9), si(0.5, 0.8, 0.7)]
    tag = [si(0.12, 0.38, 0.5, "tag")]
    out = adjust_boundaries(rap, tag, blend=0.0)
    assert [p.box() for p in out] == [p.box() for p in rap]


def test_adjust_r1_takes_tag_boundaries():
    rap = [si(0.1, 0.4, 0.9)]
    tag = [si(0.1, 0.4, 0.5, "tag")]
    out = adjust_boundaries(rap, tag, blend=1.0)
    assert out[0].box() == (0.1, 0.4)
    tag = [si(0.12, 0.42, 0.5, "tag")]
    out = adjust_boundaries(rap, tag, blend=1.0)
    assert out[0].box() == (0.12, 0.42)


def test_adjust_hand_blend():
    rap = [si(0.4, 0.6, 0.9)]
    tag = [si(0.42, 0.64, 0.5, "tag")]
    out = adjust_boundaries(rap, tag, blend=0.5)
    assert out[0].start == pytest.approx(0.41)
    assert out[0].end == pytest.approx(0.62)
    assert out[0].score == 0.9  # scores unchanged


def test_adjust_below_match_threshold_unchanged():
    rap = [si(0.1, 0.3, 0.9)]
    tag = [si(0.6, 0.9, 0.5, "tag")]
    assert adjust_boundaries(rap, tag, blend=0.5)[0].box() == (0.1, 0.3)


def test_adjust_empty_tag_identity():
    rap = [si(0.1, 0.3, 0.9)]
    assert [p.box() for p in adjust_boundaries(rap, [], blend=0.7)] == [(0.1, 0.3)]


def test_adjust_picks_max_iou_candidate():
    rap = [si(0.4, 0.6, 0.9)]
    tag = [si(0.0, 0.55, 0.5, "tag"), si(0.41, 0.61, 0.5, "tag")]
    out = adjust_boundaries(rap, tag, blend=1.0)
    assert out[0].box() == (0.41, 0.61)


# ---------------------------------------------------------------- ranking

def test_rank_constant_scorers():
    p_a = np.linspace(0, 1, 16)
    props = [si(0.1, 0.4, 0.9), si(0.5, 0.9, 0.5)]
    unchanged = rank_proposals(props, p_a, lambda f: 1.0)
    assert [p.score for p in unchanged] == [0.9, 0.5]
    zeroed = rank_proposals(props, p_a, lambda f: 0.0)
    assert [p.score for p in zeroed] == [0.0, 0.0]
    assert [p.box() for p in zeroed] == [p.box() for p in props]


def test_proposal_feature_layout():
    p_a = np.linspace(0, 1, 64)
    f = proposal_feature(p_a, 0.4, 0.6)
    assert f.shape == (FEATURE_POINTS,)
    # interior samples of a ramp stay ordered; context clamps stay in range
    assert np.all((f >= 0) & (f <= 1))
    assert np.all(np.diff(f[8:24]) > 0)


def test_ranker_output_in_unit_interval():
    net = RankerNet(seed=0)
    rng = np.random.default_rng(1)
    for _ in range(10):
        v = net.estimate(rng.uniform(0, 1, FEATURE_POINTS))
        assert 0.0 < v < 1.0


def _spearman(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    ra -= ra.mean()
    rb -= rb.mean()
    return float((ra * rb).sum() / np.sqrt((ra * ra).sum() * (rb * rb).sum()))


def _landscape_samples(rng, n_videos, t=64, props_per_video=12):
    feats, targets = [], []
    for _ in range(n_videos):
        s = rng.uniform(0.05, 0.55)
        e = s + rng.uniform(0.15, 0.4)
        gt = (s, min(e, 0.95))
        centers = (np.arange(t) + 0.5) / t
        p_a = np.where((centers >= gt[0]) & (centers <= gt[1]), 0.9, 0.1)
        p_a = np.clip(p_a + rng.normal(0, 0.05, t), 0, 1)
        for _ in range(props_per_video):
            js = rng.uniform(0, 0.9)
            je = js + rng.uniform(0.05, 0.5)
            box = (js, min(je, 1.0))
            feats.append(proposal_feature(p_a, *box))
            targets.append(iou(gt, box))
    return feats, np.array(targets)


def test_trained_ranker_orders_by_overlap():
    """Spearman correlation above 0.8 on held-out synthetic proposals."""
    from rapnet import tensor as T
    from rapnet.train import SGD

    rng = np.random.default_rng(7)
    train_f, train_t = _landscape_samples(rng, 30)
    test_f, test_t = _landscape_samples(rng, 8)

    net = RankerNet(seed=3)
    opt = SGD(net.parameters(), momentum=0.9)
    n = len(train_f)
    for epoch in range(20):
        order = rng.permutation(n)
        for lo in range(0, n, 32):
            idx = order[lo:lo + 32]
            net.zero_grad()
            loss = T.tensor(0.0)
            for i in idx:
                loss = loss + (net.forward(train_f[i]) - train_t[i]).smooth_l1()
            T.backward(loss * (1.0 / len(idx)))
            opt.step(0.2)

    preds = np.array([net.estimate(f) for f in test_f])
    rho = _spearman(preds, test_t)
    assert rho > 0.8, f"spearman {rho:.3f}"


# --------------------------------------------------------------- soft-nms

def naive_soft_nms(props, sigma=0.5, min_score=1e-4, top_k=100,
                   overlap_thresh=0.65):
    scores = [p.score for p in props]
    remaining = list(range(len(props)))
    picks = []
    while remaining and len(picks) < top_k:
        best = max(remaining, key=lambda i: scores[i])
        if scores[best] < min_score:
            break
        picks.append(ScoredInterval(props[best].start, props[best].end,
                                    scores[best], props[best].source))
        remaining.remove(best)
        for j in remaining:
            v = iou(props[j].box(), props[best].box())
            if v > overlap_thresh:
                scores[j] = scores[j] * np.exp(-v * v / sigma)
    return picks


def test_soft_nms_disjoint_survive():
    props = [si(0.1, 0.3, 0.9), si(0.5, 0.8, 0.7)]
    out = soft_nms(props)
    assert [(p.box(), p.score) for p in out] == [((0.1, 0.3), 0.9),
                                                 ((0.5, 0.8), 0.7)]


def test_soft_nms_identical_decay():
    props = [si(0.2, 0.6, 0.9), si(0.2, 0.6, 0.8)]
    out = soft_nms(props, sigma=0.5)
    assert out[0].score == 0.9
    assert out[1].score == pytest.approx(0.8 * np.exp(-1 / 0.5))


def test_soft_nms_empty_and_caps():
    assert soft_nms([]) == []
    props = [si(i / 20, i / 20 + 0.02, 0.5) for i in range(15)]
    assert len(soft_nms(props, top_k=10)) == 10
    faint = [si(0.1, 0.2, 1e-6)]
    assert soft_nms(faint, min_score=1e-4) == []


def test_soft_nms_matches_naive_oracle():
    rng = np.random.default_rng(11)
    props = []
    for _ in range(500):
        s = rng.uniform(0, 0.95)
        e = s + rng.uniform(0.01, 0.5)
        props.append(si(s, min(e, 1.0), rng.uniform(0, 1)))
    got = soft_nms(props, sigma=0.5, min_score=1e-3, top_k=200,
                   overlap_thresh=0.65)
    want = naive_soft_nms(props, sigma=0.5, min_score=1e-3, top_k=200,
                          overlap_thresh=0.65)
    assert len(got) == len(want)
    for g, w in zip(got, want):
        assert g.box() == w.box()
        assert g.score == w.score  # bit-equal


def test_soft_nms_never_increases_scores_and_orders_picks():
    rng = np.random.default_rng(12)
    for trial in range(10):
        props = [si(s, min(s + w, 1.0), sc) for s, w, sc in
                 zip(rng.uniform(0, 0.9, 50), rng.uniform(0.02, 0.4, 50),
                     rng.uniform(0, 1, 50))]
        out = soft_nms(props, top_k=50, min_score=0.0)
        by_box = {p.box(): p.score for p in props}
        for p in out:
            assert p.score <= by_box[p.box()] + 1e-15
        scores = [p.score for p in out]
        assert all(a >= b for a, b in zip(scores, scores[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_soft_nms_membership_preserved(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    props = [si(s, min(s + w, 1.0), sc) for s, w, sc in
             zip(rng.uniform(0, 0.9, n), rng.uniform(0.02, 0.4, n),
                 rng.uniform(0.1, 1, n))]
    out = soft_nms(props, min_score=0.0, top_k=100)
    assert len(out) == n
    assert {p.box() for p in out} == {p.box() for p in props}
