"""Adaptive-moment optimizer and the warm-up plus halving learning-rate schedule."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from sgseg.autodiff import Tensor
from sgseg.errors import ConfigError, NumericError


def learning_rate(epoch: int, base: float, warmup: int, decay_every: int, factor: float = 0.5,
                  schedule: str = "step") -> float:
    """Rate for a 1-based epoch: linear warm-up to ``base``, then decay by ``factor``.

    ``"step"`` multiplies by ``factor`` once per ``decay_every`` epochs after the
    warm-up; ``"smooth"`` decays continuously at the same half-life.
    """
    if epoch < 1:
        raise ConfigError(f"epochs are 1-based, got {epoch}")
    if warmup > 0 and epoch <= warmup:
        return base * epoch / warmup
    past = epoch - warmup
    if decay_every <= 0:
        return base
    if schedule == "step":
        return base * factor ** math.ceil(past / decay_every)
    if schedule == "smooth":
        return base * factor ** (past / decay_every)
    raise ConfigError(f"unknown schedule {schedule!r}")


class Adam:
    """Adam with L2 weight decay added to the gradient."""

    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1) or eps <= 0 or weight_decay < 0:
            raise ConfigError("invalid Adam hyper-parameters")
        self.params = list(params)
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.steps = 0

    def step(self, lr: float) -> None:
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NumericError("non-finite gradient")
            grads.append(g)
        self.steps += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.steps
        c2 = 1 - b2 ** self.steps
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)

    def state(self) -> dict:
        return {"steps": self.steps, "m": self.m, "v": self.v}

    def load_state(self, steps: int, m: Sequence[np.ndarray], v: Sequence[np.ndarray]) -> None:
        if len(m) != len(self.params) or len(v) != len(self.params):
            raise ConfigError("optimizer state does not match the parameter list")
        for p, mi, vi in zip(self.params, m, v):
            if mi.shape != p.shape or vi.shape != p.shape:
                raise ConfigError("optimizer state shape mismatch")
        self.steps = int(steps)
        self.m = [np.array(x, dtype=p.data.dtype) for x, p in zip(m, self.params)]
        self.v = [np.array(x, dtype=p.data.dtype) for x, p in zip(v, self.params)]
