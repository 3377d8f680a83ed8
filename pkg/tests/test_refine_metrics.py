import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _oracles import (brute_frame_counts, brute_segmental_counts, moving_average,
                      random_segments)
from sgseg import kernels
from sgseg.autodiff import Tensor, precision
from sgseg.errors import ConfigError, DimensionError
from sgseg.gradcheck import grad_check
from sgseg import autodiff as ad
from sgseg.metrics import (ClassCounts, evaluate_sequence, f1_score, frame_f1, frame_macro_f1,
                           segmental_f1)
from sgseg.refine import (Segment, barrier_pooling_tensor, extract_segments, filter_boundaries,
                          local_barrier_pooling)


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# boundary filter

def test_filter_example():
    out = filter_boundaries(np.array([2.0, 0.0]), 0.85)
    np.testing.assert_allclose(out, [sigmoid(2.0), 0.0], rtol=1e-12)
    assert round(out[0], 4) == 0.8808


def test_filter_alpha_zero_is_sigmoid():
    z = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(filter_boundaries(z, 0.0), [sigmoid(v) for v in z], rtol=1e-12)


def test_filter_alpha_one_is_all_zero():
    z = np.array([0.0, 20.0, 50.0, 800.0])
    assert not filter_boundaries(z, 1.0).any()


def test_filter_drops_channel_axis():
    assert filter_boundaries(np.zeros((2, 7, 1)), 0.5).shape == (2, 7)


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_filter_rejects_alpha(alpha):
    with pytest.raises(ConfigError):
        filter_boundaries(np.zeros(3), alpha)


def test_filter_values_in_range():
    z = np.random.default_rng(0).normal(scale=4, size=500)
    b = filter_boundaries(z, 0.7)
    nz = b[b > 0]
    assert (nz >= 0.7).all() and (nz < 1).all()


@given(st.lists(st.floats(-8, 8), min_size=1, max_size=40), st.floats(0, 1), st.floats(0, 1))
def test_filter_monotone_in_alpha(z, a, b):
    lo, hi = sorted((a, b))
    z = np.array(z)
    assert np.count_nonzero(filter_boundaries(z, hi)) <= np.count_nonzero(filter_boundaries(z, lo))


# barrier pooling

def test_pooling_without_barriers_is_moving_average():
    logits = np.random.default_rng(1).standard_normal((30, 4))
    out = local_barrier_pooling(logits, np.zeros(30), 3)
    np.testing.assert_allclose(out, moving_average(logits, 3), atol=1e-12)


def test_pooling_window_zero_is_identity():
    logits = np.random.default_rng(2).standard_normal((9, 3))
    b = np.random.default_rng(3).uniform(size=9)
    assert np.array_equal(local_barrier_pooling(logits, b, 0), logits)


def test_pooling_direct_formula_values():
    logits = np.array([[0.0], [10.0], [0.0]])
    half = np.array([0.0, 0.5, 0.0])
    out = local_barrier_pooling(logits, half, 1)[:, 0]
    np.testing.assert_allclose(out, [5.0, 10.0 / 3, 5.0])
    # w=2: frame 2 reaches frame 0 through the half barrier, weight 0.5
    out = local_barrier_pooling(logits, half, 2)[:, 0]
    np.testing.assert_allclose(out[0], 10.0 / 2.5)
    # a full barrier at frame 1 only blocks frames on its far side, not frame 1 itself
    out = local_barrier_pooling(logits, np.array([0.0, 1.0, 0.0]), 2)[:, 0]
    np.testing.assert_allclose(out, [5.0, 10.0 / 3, 5.0])


def test_pooling_nothing_crosses_full_barrier():
    rng = np.random.default_rng(4)
    logits = rng.standard_normal((20, 3))
    b = rng.uniform(0, 0.9, size=20)
    b[8] = 1.0
    base = local_barrier_pooling(logits, b, 5)
    changed = logits.copy()
    changed[9:] += rng.standard_normal((11, 3)) * 100
    after = local_barrier_pooling(changed, b, 5)
    assert np.array_equal(base[:8], after[:8])
    changed = logits.copy()
    changed[:8] += 100.0
    after = local_barrier_pooling(changed, b, 5)
    assert np.array_equal(base[9:], after[9:])


def test_pooling_preserves_argmax_far_from_boundaries():
    labels = np.repeat([0, 2, 1], 12)
    logits = np.eye(3)[labels] * 3.0
    b = np.zeros(36)
    b[[12, 24]] = 0.95
    w = 4
    out = local_barrier_pooling(logits, b, w).argmax(-1)
    far = np.ones(36, dtype=bool)
    for edge in (12, 24):
        far[edge - w - 1: edge + w + 1] = False
    assert np.array_equal(out[far], labels[far])


def test_pooling_batched_and_shape_errors():
    rng = np.random.default_rng(5)
    logits = rng.standard_normal((2, 6, 3))
    b = rng.uniform(size=(2, 6))
    out = local_barrier_pooling(logits, b, 2)
    for i in range(2):
        np.testing.assert_allclose(out[i], local_barrier_pooling(logits[i], b[i], 2))
    with pytest.raises(DimensionError):
        local_barrier_pooling(logits, b[:, :5], 2)
    with pytest.raises(ConfigError):
        local_barrier_pooling(logits, b, -1)


def test_pooling_backends_agree():
    if kernels.compiled is None:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(6)
    logits = rng.standard_normal((40, 5))
    b = rng.uniform(size=40) * (rng.uniform(size=40) > 0.7)
    fast = kernels.compiled.barrier_pool(logits, b, 4)
    slow = kernels.python.barrier_pool(logits, b, 4)
    np.testing.assert_allclose(fast, slow, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(kernels.compiled.barrier_matrix(b, 4), kernels.python.barrier_matrix(b, 4),
                               rtol=1e-12, atol=1e-15)
    labels = rng.integers(0, 3, size=50)
    for x, y in zip(kernels.compiled.run_lengths(labels), kernels.python.run_lengths(labels)):
        assert np.array_equal(x, y)


def test_pooling_matrix_matches_loop_and_is_differentiable():
    rng = np.random.default_rng(7)
    logits = rng.standard_normal((2, 10, 3))
    b = rng.uniform(size=(2, 10))
    with precision(np.float64):
        out = barrier_pooling_tensor(Tensor(logits), b, 3)
        np.testing.assert_allclose(out.data, local_barrier_pooling(logits, b, 3), atol=1e-12)
        w = rng.standard_normal(logits.shape)
        err = grad_check(lambda x: ad.sum_(ad.mul(barrier_pooling_tensor(x, b, 3), Tensor(w))),
                         [Tensor(logits, requires_grad=True)])
    assert err <= 1e-6


# segments

@pytest.mark.parametrize("labels, null, expected", [
    ([0, 0, 1], None, [(0, 0, 1), (1, 2, 2)]),
    ([5, 5], 5, []),
    ([1, 5, 1], 5, [(1, 0, 0), (1, 2, 2)]),
    ([], None, []),
])
def test_extract_segments(labels, null, expected):
    assert extract_segments(labels, null) == [Segment(*s) for s in expected]


# segmental F1

def test_segmental_split_prediction_example():
    gt = [Segment(0, 0, 9)]
    pred = [Segment(0, 0, 4), Segment(0, 5, 9)]
    c = segmental_f1(pred, gt, 0.5).counts[0]
    assert (c.tp, c.fp, c.fn) == (1, 1, 0)
    assert c.precision == 0.5 and c.recall == 1.0
    assert round(c.f1, 3) == 0.667


def test_segmental_identical_lists_score_one():
    segs = [Segment(0, 0, 3), Segment(2, 4, 4), Segment(0, 7, 9)]
    assert segmental_f1(segs, segs).macro_f1 == 1.0


def test_segmental_class_absent_from_gt_is_not_averaged():
    gt = [Segment(0, 0, 4)]
    pred = [Segment(0, 0, 4), Segment(1, 6, 8)]
    rep = segmental_f1(pred, gt)
    assert rep.scored_classes == [0]
    assert rep.macro_f1 == 1.0
    assert rep.counts[1].fp == 1


def test_segmental_rejects_threshold():
    with pytest.raises(ConfigError):
        segmental_f1([], [], 0.0)


@pytest.mark.parametrize("thr", [0.5, 0.75, 1.0])
def test_segmental_matches_brute_force(thr):
    rng = np.random.default_rng(8)
    for _ in range(200):
        pred, gt = random_segments(rng), random_segments(rng)
        rep = segmental_f1([Segment(*s) for s in pred], [Segment(*s) for s in gt], thr)
        got = {c: (v.tp, v.fp, v.fn) for c, v in rep.counts.items()}
        assert got == brute_segmental_counts(pred, gt, thr)


def test_segmental_swap_exchanges_precision_and_recall():
    rng = np.random.default_rng(9)
    for _ in range(100):
        pred = [Segment(0, s, e) for _, s, e in random_segments(rng)]
        gt = [Segment(0, s, e) for _, s, e in random_segments(rng)]
        if not pred or not gt:
            continue
        a = segmental_f1(pred, gt).counts[0]
        b = segmental_f1(gt, pred).counts[0]
        assert (a.precision, a.recall) == (b.recall, b.precision)


@given(st.integers(1, 50), st.integers(0, 50))
def test_f1_equals_precision_when_precision_equals_recall(tp, err):
    c = ClassCounts(tp, err, err)
    assert c.precision == c.recall
    assert c.f1 == c.precision


def test_f1_score_zero_division():
    assert f1_score(0.0, 0.0) == 0.0
    assert ClassCounts().f1 == 0.0


# frame F1

def test_frame_f1_identical_and_disjoint():
    a = np.array([1, 1, 2, 2, 0, 3])
    assert frame_macro_f1(a, a, null_label=0) == 1.0
    assert frame_macro_f1(np.full(4, 1), np.full(4, 2), null_label=0) == 0.0


def test_frame_f1_matches_brute_force():
    rng = np.random.default_rng(10)
    for _ in range(100):
        t = int(rng.integers(1, 30))
        pred, gt = rng.integers(0, 3, size=t), rng.integers(0, 3, size=t)
        rep = frame_f1(pred, gt, null_label=0)
        got = {c: (v.tp, v.fp, v.fn) for c, v in rep.counts.items()}
        assert got == brute_frame_counts(pred, gt, 0)


def test_frame_f1_two_class_hand_count():
    pred = np.array([1, 1, 2, 2, 1])
    gt = np.array([1, 2, 2, 2, 2])
    rep = frame_f1(pred, gt)
    # class 1: tp 1, fp 2, fn 0 -> P 1/3, R 1 -> F1 0.5; class 2: tp 2, fp 0, fn 2 -> F1 2/3
    assert rep.counts[1].f1 == pytest.approx(0.5)
    assert rep.counts[2].f1 == pytest.approx(2 / 3)
    assert rep.macro_f1 == pytest.approx((0.5 + 2 / 3) / 2)


def test_frame_f1_length_mismatch():
    with pytest.raises(DimensionError):
        frame_f1([1, 2], [1])


def test_evaluate_sequence_ignores_predictions_on_null_frames():
    gt = np.array([0, 0, 1, 1, 1, 0, 2, 2])
    pred = np.array([3, 3, 1, 1, 1, 3, 2, 2])
    seg, frame = evaluate_sequence(pred, gt, null_label=0, iou_threshold=0.5)
    assert seg.macro_f1 == 1.0 and frame.macro_f1 == 1.0
    assert 3 not in seg.counts
