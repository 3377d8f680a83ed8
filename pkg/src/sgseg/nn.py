"""Layers built on :mod:`sgseg.autodiff`.

Parameters are initialised uniformly in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``
with zero biases, drawn from a caller-supplied ``numpy.random.Generator``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from sgseg import autodiff as ad
from sgseg.autodiff import Tensor
from sgseg.errors import ConfigError, DimensionError

MASK_MODES = ("query", "key")
_KEY_MASK_FILL = -1e9


class Module:
    """Container that discovers parameters stored on its attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.is_leaf and value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
            elif isinstance(value, dict):
                for key in sorted(value):
                    if isinstance(value[key], Module):
                        yield from value[key].named_parameters(f"{full}.{key}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ConfigError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def zero_(self) -> None:
        """Set every parameter to zero (used to isolate residual paths)."""
        for p in self.parameters():
            p.data[...] = 0


def _param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=ad.default_dtype())


def uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return _param(rng.uniform(-bound, bound, size=shape))


def zeros(shape) -> Tensor:
    return _param(np.zeros(shape))


def ones(shape) -> Tensor:
    return _param(np.ones(shape))


def constant(values: np.ndarray) -> Tensor:
    return Tensor(values, dtype=ad.default_dtype())


class Affine(Module):
    """``x @ W + b`` along the last axis."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = uniform(rng, (d_in, d_out), d_in)
        self.bias = zeros((d_out,)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return affine(x, self.weight, self.bias)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise DimensionError(f"affine: input {x.shape} does not fit weight {weight.shape}")
    y = ad.matmul(x, weight)
    if bias is None:
        return y
    return ad.add(y, ad.reshape(bias, (1,) * (y.ndim - 1) + bias.shape))


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gamma = ones((dim,))
        self.beta = zeros((dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta)


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    num_heads: int = 20
    mask_mode: str = "query"

    def __post_init__(self):
        if self.num_heads < 1 or self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads


def _mask_array(mask, n: int, t: int, dtype) -> np.ndarray:
    m = np.asarray(mask, dtype=dtype)
    if m.ndim == 1:
        m = np.broadcast_to(m, (n, m.shape[0]))
    if m.shape[-1] != t:
        raise DimensionError(f"mask length {m.shape[-1]} != sequence length {t}")
    if m.shape[0] not in (1, n):
        raise DimensionError(f"mask batch {m.shape[0]} does not match batch {n}")
    return np.broadcast_to(m, (n, t))


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    num_heads: int,
    mask=None,
    mask_mode: str = "query",
    return_weights: bool = False,
):
    """Multi-head scaled dot-product attention on already-projected inputs.

    ``mask`` is a 0/1 array of shape [T] or [N, T]. In ``"query"`` mode the
    masked-out query rows are zeroed before the logits are formed, so they
    attend uniformly over all keys. In ``"key"`` mode masked keys receive a
    large negative logit instead.
    """
    if q.shape[0] != k.shape[0] or q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise DimensionError(f"attention shapes q={q.shape} k={k.shape} v={v.shape}")
    n, tq, e = q.shape
    tk = k.shape[1]
    if e % num_heads:
        raise ConfigError(f"model_dim {e} is not divisible by num_heads {num_heads}")
    d = e // num_heads
    bias = None
    if mask is not None:
        if mask_mode == "query":
            m = _mask_array(mask, n, tq, q.dtype)
            q = ad.mul(q, constant(m[:, :, None]))
        elif mask_mode == "key":
            m = _mask_array(mask, n, tk, q.dtype)
            bias = constant(((1.0 - m) * _KEY_MASK_FILL)[:, None, None, :])
        else:
            raise ConfigError(f"unknown mask_mode {mask_mode!r}")
    qh = ad.permute(ad.reshape(q, (n, tq, num_heads, d)), (0, 2, 1, 3))
    kh = ad.permute(ad.reshape(k, (n, tk, num_heads, d)), (0, 2, 3, 1))
    vh = ad.permute(ad.reshape(v, (n, tk, num_heads, d)), (0, 2, 1, 3))
    logits = ad.scale(ad.matmul(qh, kh), 1.0 / math.sqrt(d))
    if bias is not None:
        logits = ad.add(logits, bias)
    weights = ad.softmax_lastdim(logits)
    out = ad.reshape(ad.permute(ad.matmul(weights, vh), (0, 2, 1, 3)), (n, tq, e))
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    """Projected multi-head attention: ``W_o(attn(W_q q, W_k kv, W_v kv))``.

    No residual is added here.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator):
        e = cfg.model_dim
        self.cfg = cfg
        self.q_proj = Affine(e, e, rng)
        # a key bias shifts every logit of a row equally, so softmax cancels it
        self.k_proj = Affine(e, e, rng, bias=False)
        self.v_proj = Affine(e, e, rng)
        self.out_proj = Affine(e, e, rng)
        self.last_weights: Tensor | None = None

    def __call__(self, query_src: Tensor, kv_src: Tensor, mask=None, keep_weights: bool = False) -> Tensor:
        out, weights = attention(
            self.q_proj(query_src),
            self.k_proj(kv_src),
            self.v_proj(kv_src),
            self.cfg.num_heads,
            mask=mask,
            mask_mode=self.cfg.mask_mode,
            return_weights=True,
        )
        self.last_weights = weights if keep_weights else None
        return self.out_proj(out)


class FeedForward(Module):
    def __init__(self, dim: int, ratio: int, rng: np.random.Generator):
        self.up = Affine(dim, dim * ratio, rng)
        self.down = Affine(dim * ratio, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(ad.gelu(self.up(x)))


class EncoderLayer(Module):
    """Pre-norm transformer encoder layer (self-attention then feed-forward)."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, ffn_ratio: int = 4):
        self.norm1 = LayerNorm(cfg.model_dim)
        self.attn = MultiHeadAttention(cfg, rng)
        self.norm2 = LayerNorm(cfg.model_dim)
        self.ffn = FeedForward(cfg.model_dim, ffn_ratio, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.norm1(x)
        x = ad.add(x, self.attn(h, h))
        return ad.add(x, self.ffn(self.norm2(x)))


class LSTMLayer(Module):
    """Gated recurrence over time; optional reverse pass summed into the output."""

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator, bidirectional: bool = False):
        self.w_ih = uniform(rng, (d_in, 4 * hidden), hidden)
        self.w_hh = uniform(rng, (hidden, 4 * hidden), hidden)
        self.bias = zeros((4 * hidden,))
        self.backward_pass = LSTMLayer(d_in, hidden, rng) if bidirectional else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.lstm(x, self.w_ih, self.w_hh, self.bias)
        if self.backward_pass is not None:
            bp = self.backward_pass
            out = ad.add(out, ad.lstm(x, bp.w_ih, bp.w_hh, bp.bias, reverse=True))
        return out


class Conv1d(Module):
    """Same-length temporal convolution; the kernel width must be odd."""

    def __init__(self, d_in: int, d_out: int, kernel: int, rng: np.random.Generator):
        if kernel < 1 or kernel % 2 == 0:
            raise ConfigError(f"conv kernel width must be odd and positive, got {kernel}")
        self.weight = uniform(rng, (kernel, d_in, d_out), kernel * d_in)
        self.bias = zeros((d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv1d(x, self.weight, self.bias)


class PositionalEmbedding(Module):
    """Learned additive position table, sliced to the input length."""

    def __init__(self, max_len: int, dim: int, rng: np.random.Generator):
        self.table = uniform(rng, (max_len, dim), dim)

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[1]
        if t > self.table.shape[0]:
            raise DimensionError(f"sequence length {t} exceeds positional table {self.table.shape[0]}")
        return ad.add(x, ad.reshape(self.table[:t], (1, t, x.shape[-1])))
