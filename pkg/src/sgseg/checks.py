"""Finite-difference checks of every layer type and of the full small model at 64-bit."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from sgseg import autodiff as ad
from sgseg import nn
from sgseg.autodiff import Tensor, precision
from sgseg.branches import InteractiveBranches
from sgseg.config import toy_config
from sgseg.extract import Bottleneck, DenseExtractor
from sgseg.fusion import FusionStack
from sgseg.gradcheck import grad_check
from sgseg.losses import boundary_targets_from_labels, frame_boundary_loss, frame_class_loss
from sgseg.model import SegmentationModel, compute_losses

TOLERANCE = 1e-4
TOY_CHANNELS = {"I": 12, "K": 34, "B": 4, "D": 2}
# Deep blocks mix strongly curved coordinates with near-zero gradients; the plain
# central difference at 1e-5 is roundoff-bound on the latter and at 1e-4
# truncation-bound on the former, so they use the fourth-order stencil at 1e-4.
COMPOSITE = {"encoder", "extractor", "bottleneck", "fusion", "branches", "full_model"}


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def _layer_cases(rng: np.random.Generator) -> dict[str, Callable[[], tuple[Callable, list[Tensor]]]]:
    def x(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    def module_case(module, inputs, call):
        # a random linear functional of the output, so every output coordinate matters
        weights = Tensor(rng.standard_normal(call(*inputs).shape))
        return (lambda *_: ad.sum_(ad.mul(call(*inputs), weights))), module.parameters() + list(inputs)

    def affine():
        m = nn.Affine(5, 3, rng)
        return module_case(m, [x(2, 4, 5)], m)

    def layer_norm():
        m = nn.LayerNorm(6)
        m.gamma.data[...] = rng.uniform(0.5, 1.5, size=6)
        return module_case(m, [x(2, 3, 6)], m)

    def attention():
        m = nn.MultiHeadAttention(nn.AttentionConfig(8, 2), rng)
        mask = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        return module_case(m, [x(1, 5, 8), x(1, 5, 8)], lambda q, kv: m(q, kv, mask=mask))

    def encoder():
        m = nn.EncoderLayer(nn.AttentionConfig(8, 2), rng)
        return module_case(m, [x(1, 5, 8)], m)

    def lstm():
        m = nn.LSTMLayer(4, 5, rng, bidirectional=True)
        return module_case(m, [x(2, 6, 4)], m)

    def conv():
        m = nn.Conv1d(3, 4, 3, rng)
        return module_case(m, [x(2, 7, 3)], m)

    def extractor():
        m = DenseExtractor(5, 8, 1, 2, 16, rng)
        stream = rng.standard_normal((1, 6, 5))
        return module_case(m, [], lambda: m(stream))

    def bottleneck():
        m = Bottleneck(8, 3, rng)
        feats = x(1, 6, 8)

        def call(f):
            out = m(f)
            return ad.concat([out.features, out.class_probs, out.boundary_probs], axis=-1)

        return module_case(m, [feats], call)

    def fusion():
        m = FusionStack(8, 2, 1, rng)
        mask = np.array([1.0, 0.0, 0.0, 1.0, 1.0, 0.0])
        return module_case(m, [x(1, 6, 8), x(1, 6, 8), x(1, 6, 8)], lambda a, b, g: m(a, b, g, mask))

    def branches():
        m = InteractiveBranches(8, 2, 2, 3, rng)

        def call(f):
            out = m(f)
            return ad.concat([out.class_logits, out.boundary_logits], axis=-1)

        return module_case(m, [x(1, 6, 8)], call)

    def losses():
        labels = np.array([[0, 1, 1, 2, 2, 0, 1]])
        y = boundary_targets_from_labels(labels, 1, 0)
        logits, blogits = x(1, 7, 3), x(1, 7, 1)

        def f(a, b):
            return ad.add(frame_class_loss(ad.softmax_lastdim(a), labels, 0),
                          frame_boundary_loss(ad.sigmoid(b), y, labels, 0))

        return f, [logits, blogits]

    return {
        "affine": affine, "layer_norm": layer_norm, "attention": attention, "encoder": encoder,
        "lstm": lstm, "conv1d": conv, "extractor": extractor, "bottleneck": bottleneck,
        "fusion": fusion, "branches": branches, "losses": losses,
    }


def full_model_case(seed: int = 0, length: int = 16, num_classes: int = 5):
    """The small model (extractor depth 2, fusion depth 1, branch depth 2, width 16, 4 heads)."""
    rng = np.random.default_rng(seed)
    cfg = toy_config(seed=seed)
    model = SegmentationModel(cfg, TOY_CHANNELS, num_classes)
    batch = {m: rng.standard_normal((1, length, c)) for m, c in TOY_CHANNELS.items() if m != "D"}
    batch["D"] = (rng.uniform(size=(1, length, TOY_CHANNELS["D"])) < 0.4).astype(np.float64)
    labels = rng.integers(0, num_classes, size=(1, length))
    return (lambda *_: compute_losses(model, model(batch), labels, 0).total), model.parameters()


def run_gradchecks(max_coords: int = 4, seed: int = 0, include_model: bool = True,
                   only: set[str] | None = None) -> list[CheckResult]:
    """Max relative error per layer type, and for the full model with ``max_coords`` probes per tensor."""
    results = []
    with precision(np.float64):
        cases = _layer_cases(np.random.default_rng(seed))
        if include_model:
            cases["full_model"] = lambda: full_model_case(seed)
        for name, build in cases.items():
            if only is not None and name not in only:
                continue
            start = time.perf_counter()
            f, params = build()
            coords = max_coords if name == "full_model" else None
            if name in COMPOSITE:
                err = grad_check(f, params, eps=1e-4, max_coords=coords, seed=seed, stencil=4)
            else:
                err = grad_check(f, params, max_coords=coords, seed=seed)
            results.append(CheckResult(name, err, time.perf_counter() - start))
    return results
