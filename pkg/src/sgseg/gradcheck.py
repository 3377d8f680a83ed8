"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from sgseg.autodiff import Tape, Tensor, backward
from sgseg.errors import ContractError


def _as_list(x) -> list[Tensor]:
    return [x] if isinstance(x, Tensor) else list(x)


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise ContractError(f"checked function must return a scalar, got shape {out.shape}")
    return float(out.data.reshape(-1)[0])


def grad_check_report(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    stencil: int = 2,
) -> dict[int, float]:
    """Per-input max relative error between analytic and numeric gradients.

    ``f`` is called as ``f(*xs)`` and must return a scalar tensor. With
    ``max_coords`` set, at most that many coordinates of each input are probed
    (chosen with a seeded generator); otherwise every coordinate is.
    ``stencil=4`` uses the fourth-order central difference, whose truncation
    error is small enough to run at a larger ``eps`` where roundoff matters less.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ContractError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    if stencil not in (2, 4):
        raise ContractError(f"stencil must be 2 or 4, got {stencil}")
    xs = _as_list(x)
    saved_flags = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
    try:
        with Tape() as tape:
            out = f(*xs)
        base = _scalar(out)
        backward(out, tape)
        analytic = [np.array(t.grad, dtype=np.float64) for t in xs]
        if _scalar(f(*xs)) != base or _scalar(f(*xs)) != base:
            raise ContractError("checked function is not deterministic")

        rng = np.random.default_rng(seed)
        report: dict[int, float] = {}
        for i, t in enumerate(xs):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            worst = 0.0
            a_flat = analytic[i].reshape(-1)
            for c in coords:
                orig = flat[c]

                def at(step):
                    flat[c] = orig + step
                    value = _scalar(f(*xs))
                    flat[c] = orig
                    return value

                if stencil == 2:
                    numeric = (at(eps) - at(-eps)) / (2 * eps)
                else:
                    numeric = (8 * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (12 * eps)
                a = a_flat[c]
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-12)
                worst = max(worst, err)
            report[i] = worst
        return report
    finally:
        for t, flag in zip(xs, saved_flags):
            t.requires_grad = flag
            t.grad = None


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    stencil: int = 2,
) -> float:
    """Max relative error ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``."""
    report = grad_check_report(f, x, eps, max_coords, seed, stencil)
    return max(report.values()) if report else 0.0
