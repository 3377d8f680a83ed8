"""Per-modality feature extraction and the intermediate bottleneck."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sgseg import autodiff as ad
from sgseg import nn
from sgseg.autodiff import Tensor
from sgseg.errors import ConfigError, ContractError, ValidationError

DENSE = ("I", "K", "B")


@dataclass
class ModalityStream:
    """Raw channels of one modality, shaped [N, T, channels]."""

    modality: str
    values: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        if self.modality not in ("I", "K", "B", "D"):
            raise ValidationError(f"unknown modality {self.modality!r}")
        self.values = np.asarray(self.values)
        if self.values.ndim == 2:
            self.values = self.values[None]
        if self.values.ndim != 3:
            raise ValidationError(f"{self.modality}: expected [N, T, channels], got {self.values.shape}")
        if self.modality == "D":
            check_binary(self.values, "device stream")


def check_binary(values: np.ndarray, what: str) -> None:
    if not np.isin(values, (0, 1)).all():
        raise ValidationError(f"{what} must be binary (0/1)")


class DenseExtractor(nn.Module):
    """Affine lift to the feature width, positional embedding, encoder stack."""

    def __init__(self, raw_channels: int, width: int, depth: int, heads: int, max_len: int,
                 rng: np.random.Generator, ffn_ratio: int = 4):
        self.lift = nn.Affine(raw_channels, width, rng)
        self.position = nn.PositionalEmbedding(max_len, width, rng)
        cfg = nn.AttentionConfig(width, heads)
        self.layers = [nn.EncoderLayer(cfg, rng, ffn_ratio) for _ in range(depth)]

    def __call__(self, stream: ModalityStream | np.ndarray) -> Tensor:
        if isinstance(stream, ModalityStream):
            if stream.modality == "D":
                raise ContractError("device streams go through SparseExtractor")
            stream = stream.values
        x = self.position(self.lift(nn.constant(stream)))
        for layer in self.layers:
            x = layer(x)
        return x


class SparseExtractor(nn.Module):
    """Single fully connected layer for binary device states."""

    def __init__(self, raw_channels: int, width: int, rng: np.random.Generator):
        self.fc = nn.Affine(raw_channels, width, rng)

    def __call__(self, stream: ModalityStream | np.ndarray) -> Tensor:
        values = stream.values if isinstance(stream, ModalityStream) else np.asarray(stream)
        if isinstance(stream, ModalityStream) and stream.modality != "D":
            raise ContractError(f"SparseExtractor takes the device stream, got {stream.modality!r}")
        check_binary(values, "device stream")
        return self.fc(nn.constant(values))


@dataclass
class BottleneckOutputs:
    features: Tensor  # F_o, same shape as the input features
    class_logits: Tensor  # [N, T, C]
    class_probs: Tensor  # [N, T, C]
    boundary_logits: Tensor | None  # [N, T, 1], pre-sigmoid
    boundary_probs: Tensor | None  # [N, T, 1]


class Bottleneck(nn.Module):
    """Inner class branch (recurrence, reduce to C, restore, residual) and inner boundary branch."""

    def __init__(self, width: int, num_classes: int, rng: np.random.Generator, kernel: int = 3,
                 conv_depth: int = 2, conv_hidden: int = 8, bidirectional: bool = False):
        if num_classes >= width:
            raise ConfigError(f"bottleneck needs num_classes < width, got C={num_classes}, E={width}")
        if conv_depth < 1:
            raise ConfigError("boundary refinement needs at least one convolution")
        self.recurrent = nn.LSTMLayer(width, width, rng, bidirectional=bidirectional)
        self.reduce = nn.Affine(width, num_classes, rng)
        self.restore = nn.Affine(num_classes, width, rng)
        self.to_boundary = nn.Conv1d(width, 1, kernel, rng)
        chans = [1] + [conv_hidden] * (conv_depth - 1) + [1]
        self.boundary_convs = [nn.Conv1d(a, b, kernel, rng) for a, b in zip(chans[:-1], chans[1:])]

    def inner_class(self, features: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        logits = self.reduce(self.recurrent(features))
        probs = ad.softmax_lastdim(logits)
        out = ad.add(self.restore(logits), features)
        return out, logits, probs

    def inner_boundary(self, features: Tensor) -> Tensor:
        """Pre-sigmoid boundary score ``f_m'(f_m(F_o)) + f_m(F_o)``."""
        reduced = self.to_boundary(features)
        h = reduced
        for i, conv in enumerate(self.boundary_convs):
            h = conv(h)
            if i < len(self.boundary_convs) - 1:
                h = ad.gelu(h)
        return ad.add(h, reduced)

    def __call__(self, features: Tensor, with_boundary: bool = True) -> BottleneckOutputs:
        out, logits, probs = self.inner_class(features)
        b_logits = self.inner_boundary(out) if with_boundary else None
        b_probs = ad.sigmoid(b_logits) if b_logits is not None else None
        return BottleneckOutputs(out, logits, probs, b_logits, b_probs)
