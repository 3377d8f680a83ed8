"""Acceptance criteria, one test each, at the stated tolerances.

Every test prints a single ``PASS``/``FAIL`` line (visible with or without
``-s``) before asserting. The training-based criteria are marked ``slow``;
``pytest -m "not slow"`` skips them.
"""

import math
import statistics
import time

import numpy as np
import pytest

from _oracles import brute_segmental_counts, moving_average, random_segments
from sgseg import cli
from sgseg.ablate import GROUPS, train_and_evaluate
from sgseg.autodiff import Tensor, precision
from sgseg.config import toy_config
from sgseg.data import DEFAULT_DATASET, GeneratorConfig, generate_dataset, split_folds
from sgseg.extract import Bottleneck
from sgseg.fusion import FusionStack, FusionStage
from sgseg.losses import (LossWeights, boundary_targets_from_labels, frame_boundary_loss,
                          frame_class_loss, total_loss)
from sgseg.metrics import ClassCounts, segmental_f1
from sgseg.refine import Segment, filter_boundaries, local_barrier_pooling

SEEDS = (0, 1, 2)


@pytest.fixture
def verdict(capsys):
    """Print one result line outside pytest's capture, then assert."""

    def check(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return check


def _feats(rng, shape):
    return Tensor(rng.standard_normal(shape))


# fast criteria

def test_gradient_integrity(verdict, capsys):
    start = time.perf_counter()
    code = cli.main(["gradcheck"])
    seconds = time.perf_counter() - start
    out = capsys.readouterr().out
    worst = max(float(line.split("max_rel_error=")[1].split()[0]) for line in out.splitlines()
                if "max_rel_error=" in line)
    checked = sum("max_rel_error=" in line for line in out.splitlines())
    verdict("gradient integrity", code == 0 and worst <= 1e-4 and seconds < 120,
            f"{checked} checks incl. full model, worst rel. err {worst:.2e} (<= 1e-4), {seconds:.0f}s (< 120s)")


def test_mask_equivalence(verdict):
    rng = np.random.default_rng(100)
    equal = 0
    with precision(np.float64):
        for _ in range(100):
            seed = int(rng.integers(1 << 30))
            n, t = int(rng.integers(1, 3)), int(rng.integers(2, 12))
            guided = FusionStack(8, 2, 2, np.random.default_rng(seed))
            cross = FusionStack(8, 2, 2, np.random.default_rng(seed), variant="cross+msaf")
            m, s, g = (_feats(rng, (n, t, 8)) for _ in range(3))
            a = guided(m, s, g, np.ones((n, t))).data
            b = cross(m, s, g, np.zeros((n, t))).data
            equal += a.tobytes() == b.tobytes()
    verdict("mask equivalence", equal == 100, f"{equal}/100 random inputs bitwise equal to plain cross-attention")


def test_zero_mask_uniformity(verdict):
    rng = np.random.default_rng(101)
    worst = 0.0
    with precision(np.float64):
        for t in (1, 5, 16, 60):
            stage = FusionStage(16, 4, rng)
            m, s, g = (_feats(rng, (2, t, 16)) for _ in range(3))
            stage.sgf(m, s, g, np.zeros((2, t)), keep_weights=True)
            for w in stage.sgf_weights:
                worst = max(worst, float(np.abs(w.data - 1.0 / t).max()))
    verdict("zero-mask uniformity", worst <= 1e-6, f"max |weight - 1/T| = {worst:.1e} (<= 1e-6) for T in 1,5,16,60")


def test_residual_wiring(verdict):
    rng = np.random.default_rng(102)
    with precision(np.float64):
        bn = Bottleneck(8, 3, rng)
        bn.restore.zero_()
        x = _feats(rng, (2, 6, 8))
        a = np.array_equal(bn(x).features.data, x.data)

        stage = FusionStage(8, 2, rng)
        stage.guided_attn.out_proj.zero_()
        m, s, g = (_feats(rng, (2, 6, 8)) for _ in range(3))
        mask = (rng.uniform(size=(2, 6)) < 0.5).astype(float)
        m2, s2 = stage.sgf(m, s, g, mask)
        b = np.array_equal(m2.data, m.data + g.data) and np.array_equal(s2.data, s.data + g.data)

        stage = FusionStage(8, 2, rng)
        stage.merge.zero_()
        m3, s3 = stage.msaf(m2, s2)
        c = (np.array_equal(m3.data, stage.cross_attn(s2, m2).data + m2.data)
             and np.array_equal(s3.data, stage.cross_attn(m2, s2).data + s2.data))
    verdict("residual wiring", a and b and c,
            f"(a) bottleneck identity {a}, (b) guided fusion = input + guidance {b}, (c) merge-free = cross + residual {c}")


def test_loss_identities(verdict):
    rng = np.random.default_rng(103)
    with precision(np.float64):
        c = 7
        labels = rng.integers(0, c, size=(2, 9))
        uniform = frame_class_loss(Tensor(np.full((2, 9, c), 1.0 / c)), labels).item()
        half = frame_boundary_loss(Tensor(np.full((2, 9, 1), 0.5)), (rng.uniform(size=(2, 9)) < 0.3) * 1.0).item()

        w = LossWeights(0.35, 0.6)
        probes = []
        for i in range(4):
            args = [0.0] * 4
            args[i] = 1.0
            probes.append(total_loss(*args, w).item())
        expected = [w.lambda1, 1 - w.lambda1, w.lambda2, w.lambda2]
        coeff_ok = all(abs(p - e) <= 1e-12 for p, e in zip(probes, expected))

        labels = np.array([[1, 0, 2, 0, 0, 2, 1, 0]])
        null = np.where(labels[0] == 0)[0]
        p = rng.dirichlet(np.ones(3), size=(1, 8))
        pb = rng.uniform(0.05, 0.95, size=(1, 8, 1))
        y = boundary_targets_from_labels(labels, 1, null_label=0)
        base = (frame_class_loss(Tensor(p), labels, 0).item(), frame_boundary_loss(Tensor(pb), y, labels, 0).item())
        invariant = True
        for _ in range(20):
            p2, pb2 = p.copy(), pb.copy()
            p2[0, null] = rng.dirichlet(np.ones(3), size=len(null))
            pb2[0, null] = rng.uniform(size=(len(null), 1))
            got = (frame_class_loss(Tensor(p2), labels, 0).item(), frame_boundary_loss(Tensor(pb2), y, labels, 0).item())
            invariant &= got == base
    ok = (abs(uniform - math.log(c)) <= 1e-6 and abs(half - math.log(2)) <= 1e-6 and coeff_ok and invariant)
    verdict("loss identities", ok,
            f"uniform class loss - ln C = {uniform - math.log(c):.1e}, half boundary loss - ln 2 = "
            f"{half - math.log(2):.1e}, unit probes {['%g' % v for v in probes]}, Null invariance {invariant}")


def test_metric_oracle(verdict):
    rng = np.random.default_rng(104)
    agree = 0
    for _ in range(1000):
        pred, gt = random_segments(rng), random_segments(rng)
        rep = segmental_f1([Segment(*s) for s in pred], [Segment(*s) for s in gt], 0.5)
        got = {k: (v.tp, v.fp, v.fn) for k, v in rep.counts.items()}
        agree += got == brute_segmental_counts(pred, gt, 0.5)
    identity = 0
    for _ in range(100):
        tp, err = int(rng.integers(1, 200)), int(rng.integers(0, 200))
        counts = ClassCounts(tp, err, err)
        identity += counts.precision == counts.recall and counts.f1 == counts.precision
    verdict("metric oracle", agree == 1000 and identity == 100,
            f"{agree}/1000 lists match exhaustive matching, F1 == P in {identity}/100 P == R settings")


def test_refinement_properties(verdict):
    rng = np.random.default_rng(105)
    logits = rng.standard_normal((40, 5))
    ma_err = float(np.abs(local_barrier_pooling(logits, np.zeros(40), 4) - moving_average(logits, 4)).max())

    blocked = 0
    for _ in range(50):
        t, k = 30, int(rng.integers(3, 27))
        b = rng.uniform(0, 0.9, size=t)
        b[k] = 1.0
        x = rng.standard_normal((t, 4))
        base = local_barrier_pooling(x, b, 6)
        right, left = x.copy(), x.copy()
        right[k + 1:] += 100 * rng.standard_normal((t - k - 1, 4))
        left[:k] += 100 * rng.standard_normal((k, 4))
        blocked += (np.array_equal(base[:k], local_barrier_pooling(right, b, 6)[:k])
                    and np.array_equal(base[k + 1:], local_barrier_pooling(left, b, 6)[k + 1:]))

    monotone = 0
    for _ in range(100):
        z = rng.normal(0, 3, size=int(rng.integers(1, 60)))
        lo, hi = np.sort(rng.uniform(size=2))
        monotone += np.count_nonzero(filter_boundaries(z, hi)) <= np.count_nonzero(filter_boundaries(z, lo))
    verdict("refinement properties", ma_err <= 1e-6 and blocked == 50 and monotone == 100,
            f"moving-average err {ma_err:.1e}, {blocked}/50 full barriers block exactly, "
            f"filter monotone in alpha {monotone}/100")


# training criteria

class Runs:
    """Lazily trains (variant, seed) pairs on fold 0 of the default dataset and caches the scores."""

    def __init__(self):
        samples = generate_dataset(GeneratorConfig(**DEFAULT_DATASET))
        self.train, self.test = split_folds(samples, 5, 0)[0]
        self.device_class = GeneratorConfig(**DEFAULT_DATASET).device_linked_class
        self.results = {}

    def get(self, name, overrides, seed):
        key = (name, seed)
        if key not in self.results:
            start = time.perf_counter()
            _, result = train_and_evaluate(toy_config(seed=seed, **overrides), self.train, self.test)
            self.results[key] = (result, time.perf_counter() - start)
        return self.results[key]

    def medians(self, name, overrides):
        results = [self.get(name, overrides, s)[0] for s in SEEDS]
        return {
            "segmental": statistics.median(r.segmental.macro_f1 for r in results),
            "frame": statistics.median(r.frame.macro_f1 for r in results),
            "device_recall": statistics.median(r.class_recall(self.device_class) for r in results),
        }


def _variant(group, name):
    return next(v.overrides for v in GROUPS[group]() if v.name == name)


@pytest.fixture(scope="module")
def runs():
    return Runs()


@pytest.mark.slow
def test_end_to_end_learning_signal(runs, verdict):
    med = runs.medians("full", {})
    seconds = sum(runs.get("full", {}, s)[1] for s in SEEDS)
    ok = med["frame"] >= 0.80 and med["segmental"] >= 0.60 and seconds < 15 * 60
    verdict("end-to-end learning signal", ok,
            f"median frame F1 {med['frame']:.3f} (>= 0.80), segmental F1 @0.5 {med['segmental']:.3f} (>= 0.60), "
            f"3 runs in {seconds:.0f}s (< 900s)")


@pytest.mark.slow
def test_ablation_device_raises_linked_class_recall(runs, verdict):
    full = runs.medians("full", {})
    without = runs.medians("IKB", _variant("modalities", "I+K+B"))
    verdict("ablation (i) device stream", full["device_recall"] > without["device_recall"],
            f"median frame recall of the device-linked class {full['device_recall']:.3f} with D vs "
            f"{without['device_recall']:.3f} without")


@pytest.mark.slow
def test_ablation_inner_losses_raise_macro_f1(runs, verdict):
    full = runs.medians("full", {})
    final_only = runs.medians("final_only", _variant("losses", "final class loss only"))
    verdict("ablation (ii) inner losses", full["segmental"] > final_only["segmental"],
            f"median segmental macro F1 {full['segmental']:.4f} with all losses vs "
            f"{final_only['segmental']:.4f} with the final class loss only")


@pytest.mark.slow
def test_ablation_small_boundary_weight_beats_large(runs, verdict):
    small = runs.medians("full", {})  # default lambda2 = 0.2
    large = runs.medians("lambda2=2", _variant("lambda2", "lambda2=2"))
    verdict("ablation (iii) lambda2", small["segmental"] > large["segmental"],
            f"median segmental macro F1 {small['segmental']:.4f} at lambda2=0.2 vs {large['segmental']:.4f} at 2")


@pytest.mark.slow
def test_determinism(tmp_path, verdict, capsys):
    data = tmp_path / "data"
    assert cli.main(["synth", "--out", str(data)]) == 0
    for name in ("a", "b"):
        code = cli.main(["--threads", "1", "train", "--data", str(data), "--out", str(tmp_path / name),
                         "--toy", "--epochs", "6", "--checkpoint_every", "3"])
        assert code == 0
    capsys.readouterr()
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    verdict("determinism", "train.log" in same and "model.ckpt" in same and same == files,
            f"{len(same)}/{len(files)} output files bitwise identical ({', '.join(files)})")
