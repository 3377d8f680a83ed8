"""Frame-wise class and boundary losses and their weighted combination."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from sgseg import autodiff as ad
from sgseg.autodiff import Tensor
from sgseg.errors import ConfigError, DimensionError

log = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 0.5
    lambda2: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ConfigError(f"lambda1 must lie in [0, 1], got {self.lambda1}")
        if self.lambda2 < 0:
            raise ConfigError(f"lambda2 must be >= 0, got {self.lambda2}")


def _frame_weights(labels: np.ndarray, null_label: int | None) -> np.ndarray:
    """Per-frame weights: 1/(non-Null frames of the sequence) / batch size."""
    labels = np.atleast_2d(labels)
    valid = np.ones(labels.shape, dtype=bool) if null_label is None else labels != null_label
    per_seq = valid.sum(axis=1, keepdims=True)
    if not per_seq.any():
        log.warning("every frame is Null; loss defined as 0")
    w = np.where(valid, 1.0 / np.maximum(per_seq, 1), 0.0)
    return w / labels.shape[0]


def frame_class_loss(probs: Tensor, labels, null_label: int | None = None) -> Tensor:
    """Mean over non-Null frames of ``-log p(true class)``, averaged over the batch."""
    labels = np.asarray(labels, dtype=np.int64)
    squeeze = probs.ndim == 2
    p = ad.reshape(probs, (1,) + probs.shape) if squeeze else probs
    labels = labels.reshape(p.shape[:2])
    n_cls = p.shape[-1]
    if labels.min() < 0 or labels.max() >= n_cls:
        raise DimensionError(f"labels outside [0, {n_cls})")
    onehot = np.eye(n_cls)[labels] * _frame_weights(labels, null_label)[..., None]
    logp = ad.log(ad.clamp(p, PROB_EPS, 1.0))
    return ad.neg(ad.sum_(ad.mul(logp, Tensor(onehot, dtype=p.dtype))))


def frame_boundary_loss(probs: Tensor, targets, labels=None, null_label: int | None = None) -> Tensor:
    """Binary cross-entropy over non-Null frames; probabilities clamped to [eps, 1-eps]."""
    p = probs
    if p.ndim == 3:
        p = ad.reshape(p, p.shape[:2])
    elif p.ndim == 1:
        p = ad.reshape(p, (1, p.shape[0]))
    y = np.asarray(targets, dtype=np.float64).reshape(p.shape)
    lab = np.zeros(p.shape, dtype=np.int64) if labels is None else np.asarray(labels).reshape(p.shape)
    w = _frame_weights(lab, null_label if labels is not None else None)
    pc = ad.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
    pos = ad.mul(ad.log(pc), Tensor(w * y, dtype=p.dtype))
    neg = ad.mul(ad.log(ad.add(ad.neg(pc), 1.0)), Tensor(w * (1.0 - y), dtype=p.dtype))
    return ad.neg(ad.add(ad.sum_(pos), ad.sum_(neg)))


def inner_losses(outputs: Mapping[str, object], labels, boundary_targets, null_label: int | None = None,
                 with_boundary: bool = True) -> tuple[Tensor, Tensor | None]:
    """Sum the per-modality class (and boundary) losses of the bottleneck outputs."""
    class_terms, boundary_terms = [], []
    order = "IKBD"
    for name in sorted(outputs, key=lambda m: (order.index(m) if m in order else len(order), m)):
        out = outputs[name]
        class_terms.append(frame_class_loss(out.class_probs, labels, null_label))
        if with_boundary and out.boundary_probs is not None:
            boundary_terms.append(frame_boundary_loss(out.boundary_probs, boundary_targets, labels, null_label))
    class_total = _sum_terms(class_terms)
    boundary_total = _sum_terms(boundary_terms) if boundary_terms else None
    return class_total, boundary_total


def _sum_terms(terms: list[Tensor]) -> Tensor:
    if not terms:
        return Tensor(np.zeros(()))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total


def _term(x, like_dtype):
    if x is None:
        return None
    if isinstance(x, Tensor):
        return ad.reshape(x, ())
    return Tensor(np.asarray(float(x)), dtype=like_dtype)


def total_loss(class_inner, class_final, boundary_inner, boundary_final, weights: LossWeights) -> Tensor:
    """``l1 * Lc_inner + (1 - l1) * Lc_final + l2 * (Lb_inner + Lb_final)``.

    Any term may be ``None`` (treated as absent). Plain floats are accepted.
    """
    dtype = next((t.dtype for t in (class_inner, class_final, boundary_inner, boundary_final)
                  if isinstance(t, Tensor)), ad.default_dtype())
    parts = []
    for value, coef in (
        (class_inner, weights.lambda1),
        (class_final, 1.0 - weights.lambda1),
        (boundary_inner, weights.lambda2),
        (boundary_final, weights.lambda2),
    ):
        term = _term(value, dtype)
        if term is not None:
            parts.append(ad.scale(term, coef))
    return _sum_terms(parts)


def boundary_targets_from_labels(labels, widen: int = 1, null_label: int | None = None) -> np.ndarray:
    """1 at the first frame of every new non-Null run (not at t=0), dilated by ``widen``."""
    if widen < 0:
        raise ConfigError(f"widen must be >= 0, got {widen}")
    labels = np.asarray(labels)
    squeeze = labels.ndim == 1
    lab = np.atleast_2d(labels)
    change = np.zeros(lab.shape, dtype=bool)
    change[:, 1:] = lab[:, 1:] != lab[:, :-1]
    if null_label is not None:
        change &= lab != null_label
    out = change.copy()
    t_len = lab.shape[1]
    for shift in range(1, widen + 1):
        out[:, shift:] |= change[:, : t_len - shift]
        out[:, : t_len - shift] |= change[:, shift:]
    out = out.astype(np.float64)
    return out[0] if squeeze else out
