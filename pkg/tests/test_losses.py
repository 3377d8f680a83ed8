import math
from types import SimpleNamespace

import numpy as np
import pytest

from sgseg import autodiff as ad
from sgseg.autodiff import Tensor, precision
from sgseg.errors import ConfigError
from sgseg.losses import (LossWeights, boundary_targets_from_labels, frame_boundary_loss,
                          frame_class_loss, inner_losses, total_loss)


@pytest.fixture(autouse=True)
def f64():
    with precision(np.float64):
        yield


def probs_for(p_true, labels, num_classes):
    """Rows giving ``p_true[t]`` to ``labels[t]`` and spreading the rest evenly."""
    t = len(labels)
    rest = (1 - np.asarray(p_true)) / (num_classes - 1)
    p = np.repeat(rest[:, None], num_classes, axis=1)
    p[np.arange(t), labels] = p_true
    return Tensor(p[None])


def test_class_loss_uniform_is_log_c():
    labels = np.array([[0, 3, 9, 2]])
    loss = frame_class_loss(Tensor(np.full((1, 4, 10), 0.1)), labels)
    assert abs(loss.item() - math.log(10)) <= 1e-6


def test_class_loss_perfect_is_zero():
    labels = np.array([1, 0, 2])
    loss = frame_class_loss(Tensor(np.eye(3)[labels][None]), labels)
    assert loss.item() <= 1e-6


def test_class_loss_two_frame_example():
    loss = frame_class_loss(probs_for([0.5, 0.25], [0, 1], 3), np.array([[0, 1]]))
    assert loss.item() == pytest.approx((-math.log(0.5) - math.log(0.25)) / 2, abs=1e-12)
    assert round(loss.item(), 4) == 1.0397


def test_class_loss_excludes_null_frames():
    labels = np.array([[0, 1, 2, 0]])
    p = np.full((1, 4, 3), 1 / 3)
    p[0, 1] = [0.0, 1.0, 0.0]
    p[0, 2] = [0.0, 0.0, 1.0]
    assert frame_class_loss(Tensor(p), labels, null_label=0).item() <= 1e-6


def test_class_loss_all_null_is_zero_with_warning(caplog):
    with caplog.at_level("WARNING"):
        loss = frame_class_loss(Tensor(np.full((1, 3, 2), 0.5)), np.zeros((1, 3), int), null_label=0)
    assert loss.item() == 0.0
    assert "Null" in caplog.text


def test_class_loss_batch_is_mean_of_sequences():
    rng = np.random.default_rng(0)
    p = rng.dirichlet(np.ones(4), size=(2, 5))
    labels = rng.integers(1, 4, size=(2, 5))
    labels[1, :2] = 0
    both = frame_class_loss(Tensor(p), labels, null_label=0).item()
    each = [frame_class_loss(Tensor(p[i:i + 1]), labels[i:i + 1], null_label=0).item() for i in range(2)]
    assert both == pytest.approx(np.mean(each), rel=1e-12)


def test_boundary_loss_half_is_log_two():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, size=(1, 9)).astype(float)
    loss = frame_boundary_loss(Tensor(np.full((1, 9, 1), 0.5)), y)
    assert abs(loss.item() - math.log(2)) <= 1e-6


def test_boundary_loss_example():
    loss = frame_boundary_loss(Tensor(np.array([0.9, 0.2]).reshape(1, 2, 1)), np.array([1.0, 0.0]))
    assert loss.item() == pytest.approx((-math.log(0.9) - math.log(0.8)) / 2, abs=1e-12)
    assert round(loss.item(), 4) == 0.1643


def test_boundary_loss_saturated_is_near_zero():
    y = np.array([1.0, 0.0, 1.0])
    loss = frame_boundary_loss(Tensor(y.reshape(1, 3, 1)), y)
    assert 0 <= loss.item() <= 1e-6


def test_null_permutation_invariance():
    rng = np.random.default_rng(2)
    labels = np.array([[1, 0, 2, 0, 0, 2, 1]])
    null = np.where(labels[0] == 0)[0]
    p = rng.dirichlet(np.ones(3), size=(1, 7))
    pb = rng.uniform(0.05, 0.95, size=(1, 7, 1))
    y = boundary_targets_from_labels(labels, 1, null_label=0)
    base_c = frame_class_loss(Tensor(p), labels, 0).item()
    base_b = frame_boundary_loss(Tensor(pb), y, labels, 0).item()
    for _ in range(10):
        perm = rng.permutation(null)
        p2, pb2 = p.copy(), pb.copy()
        p2[0, null] = p[0, perm]
        pb2[0, null] = pb[0, perm]
        p2[0, null[0]] = rng.dirichlet(np.ones(3))
        pb2[0, null[0]] = rng.uniform()
        assert frame_class_loss(Tensor(p2), labels, 0).item() == base_c
        assert frame_boundary_loss(Tensor(pb2), y, labels, 0).item() == base_b


def bottleneck_out(p):
    return SimpleNamespace(class_probs=Tensor(p), boundary_probs=None)


def test_inner_losses_additive():
    labels = np.array([[0, 1, 2, 3]])
    uniform = np.full((1, 4, 10), 0.1)
    perfect = np.eye(10)[labels]
    c, b = inner_losses({m: bottleneck_out(uniform) for m in "IKB"}, labels, None, with_boundary=False)
    assert c.item() == pytest.approx(3 * math.log(10), abs=1e-9)
    assert b is None
    c, _ = inner_losses({"I": bottleneck_out(perfect), "K": bottleneck_out(uniform),
                         "B": bottleneck_out(uniform)}, labels, None, with_boundary=False)
    assert c.item() == pytest.approx(2 * math.log(10), abs=1e-6)


def test_inner_losses_equal_sum_of_single_calls():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 4, size=(2, 6))
    y = boundary_targets_from_labels(labels, 1, 0)
    outs = {}
    for m in "IKB":
        outs[m] = SimpleNamespace(class_probs=Tensor(rng.dirichlet(np.ones(4), size=(2, 6))),
                                  boundary_probs=Tensor(rng.uniform(0.1, 0.9, size=(2, 6, 1))))
    c, b = inner_losses(outs, labels, y, null_label=0)
    c_ref = b_ref = 0.0
    for m in "IKB":
        c_ref = c_ref + frame_class_loss(outs[m].class_probs, labels, 0).item()
        b_ref = b_ref + frame_boundary_loss(outs[m].boundary_probs, y, labels, 0).item()
    assert c.item() == c_ref
    assert b.item() == b_ref


def test_total_loss_arithmetic():
    assert total_loss(1.0, 1.0, 1.0, 1.0, LossWeights(0.5, 0.2)).item() == pytest.approx(1.4)
    assert total_loss(1.0, 7.0, 1.0, 1.0, LossWeights(1.0, 0.0)).item() == pytest.approx(1.0)


def test_total_loss_unit_probing():
    w = LossWeights(0.3, 0.7)
    expected = [0.3, 0.7, 0.7, 0.7]
    for i in range(4):
        args = [0.0] * 4
        args[i] = 1.0
        assert total_loss(*args, w).item() == pytest.approx(expected[i], abs=1e-12)
    assert total_loss(0.0, 0.0, 0.0, 0.0, w).item() == 0.0


def test_total_loss_skips_absent_terms_and_backprops():
    a = Tensor(np.array(2.0), requires_grad=True)
    bf = Tensor(np.array(3.0), requires_grad=True)
    with ad.Tape() as tape:
        out = total_loss(None, a, None, bf, LossWeights(0.25, 0.5))
    tape.backward(out)
    assert out.item() == pytest.approx(0.75 * 2 + 0.5 * 3)
    assert a.grad == pytest.approx(0.75) and bf.grad == pytest.approx(0.5)


@pytest.mark.parametrize("l1, l2", [(-0.1, 0.2), (1.1, 0.2), (0.5, -1)])
def test_loss_weights_validate(l1, l2):
    with pytest.raises(ConfigError):
        LossWeights(l1, l2)


@pytest.mark.parametrize("labels, widen, expected", [
    ([1, 1, 2, 2], 0, [0, 0, 1, 0]),
    ([3, 3, 3], 1, [0, 0, 0]),
    ([1, 2, 3], 1, [1, 1, 1]),
    ([1, 1, 1, 1, 2, 2, 2, 2], 1, [0, 0, 0, 1, 1, 1, 0, 0]),
    ([1, 0, 0, 2], 0, [0, 0, 0, 1]),
])
def test_boundary_targets(labels, widen, expected):
    assert boundary_targets_from_labels(np.array(labels), widen, null_label=0).tolist() == expected


def test_boundary_targets_rejects_negative_widen():
    with pytest.raises(ConfigError):
        boundary_targets_from_labels(np.array([1, 2]), -1)
