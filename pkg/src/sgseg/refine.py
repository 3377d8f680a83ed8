"""Boundary filtering, barrier-pooling refinement and segment extraction."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from sgseg import autodiff as ad
from sgseg import kernels
from sgseg.autodiff import Tensor
from sgseg.errors import ConfigError, DimensionError

_BELOW_ONE = np.nextafter(1.0, 0.0)


class Segment(NamedTuple):
    label: int
    start: int
    end: int  # inclusive


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def filter_boundaries(boundary_logits, alpha: float) -> np.ndarray:
    """Keep ``sigmoid(logit)`` where it reaches ``alpha``, zero elsewhere.

    A trailing singleton channel axis is dropped, so [N, T, 1] becomes [N, T].
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    z = _as_array(boundary_logits).astype(np.float64)
    if z.ndim >= 2 and z.shape[-1] == 1:
        z = z[..., 0]
    # sigmoid is strictly below 1; keep it so after rounding
    p = np.minimum(0.5 * (1.0 + np.tanh(0.5 * z)), _BELOW_ONE)
    return np.where(p >= alpha, p, 0.0)


def _check_window(window: int) -> None:
    if window < 0:
        raise ConfigError(f"window must be >= 0, got {window}")


def local_barrier_pooling(class_logits, barriers, window: int) -> np.ndarray:
    """Average logits over +-window frames, attenuated by the boundaries in between.

    Works on [T, C] with [T] barriers or batched [N, T, C] with [N, T].
    """
    _check_window(window)
    logits = _as_array(class_logits)
    b = np.asarray(barriers, dtype=np.float64)
    if logits.ndim == 2:
        if b.shape != logits.shape[:1]:
            raise DimensionError(f"barriers {b.shape} do not match logits {logits.shape}")
        return kernels.barrier_pool(logits, b, window)
    if b.shape != logits.shape[:2]:
        raise DimensionError(f"barriers {b.shape} do not match logits {logits.shape}")
    return np.stack([kernels.barrier_pool(logits[i], b[i], window) for i in range(logits.shape[0])])


def barrier_pooling_tensor(class_logits: Tensor, barriers, window: int) -> Tensor:
    """Differentiable (in the logits) barrier pooling for [N, T, C] tensors."""
    _check_window(window)
    b = np.asarray(barriers, dtype=np.float64)
    mats = np.stack([kernels.barrier_matrix(b[i], window) for i in range(b.shape[0])])
    return ad.matmul(Tensor(mats, dtype=class_logits.dtype), class_logits)


def extract_segments(labels, null_label: int | None = None) -> list[Segment]:
    """Maximal runs of equal labels; runs of ``null_label`` are dropped."""
    values, starts, ends = kernels.run_lengths(np.asarray(labels, dtype=np.int64))
    return [
        Segment(int(v), int(s), int(e))
        for v, s, e in zip(values, starts, ends)
        if null_label is None or v != null_label
    ]
