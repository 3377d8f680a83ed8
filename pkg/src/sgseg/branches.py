"""Mutual interactive class and boundary branches."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sgseg import autodiff as ad
from sgseg import nn
from sgseg.autodiff import Tensor
from sgseg.errors import ConfigError


@dataclass
class BranchOutputs:
    class_logits: Tensor  # [N, T, C]
    boundary_logits: Tensor | None  # [N, T, 1], pre-sigmoid; None without a boundary branch


class InteractiveBranches(nn.Module):
    def __init__(self, width: int, heads: int, depth: int, num_classes: int, rng: np.random.Generator,
                 ffn_ratio: int = 4, boundary: bool = True, first_interaction: bool = True,
                 second_interaction: bool = True):
        if depth < 2:
            raise ConfigError(f"branch depth must be >= 2, got {depth}")
        cfg = nn.AttentionConfig(width, heads)
        self.class_layers = [nn.EncoderLayer(cfg, rng, ffn_ratio) for _ in range(depth)]
        self.class_head = nn.Affine(width, num_classes, rng)
        self.boundary = boundary
        self.first_interaction = first_interaction and boundary
        self.second_interaction = second_interaction and boundary
        if boundary:
            self.boundary_layers = [nn.EncoderLayer(cfg, rng, ffn_ratio) for _ in range(depth)]
            self.boundary_head = nn.Affine(width, 1, rng)
            self.first_attn = nn.MultiHeadAttention(cfg, rng) if self.first_interaction else None
            self.second_attn = nn.MultiHeadAttention(cfg, rng) if self.second_interaction else None

    def first(self, class_first: Tensor, boundary_seed: Tensor) -> Tensor:
        """Boundary feature after the first interaction (queries from the class branch, no residual)."""
        return self.first_attn(class_first, boundary_seed)

    def second(self, boundary_end: Tensor, class_end: Tensor) -> Tensor:
        """Class feature after the second interaction (queries from the boundary branch, no residual)."""
        return self.second_attn(boundary_end, class_end)

    def __call__(self, fused: Tensor) -> BranchOutputs:
        c = self.class_layers[0](fused)
        if not self.boundary:
            for layer in self.class_layers[1:]:
                c = layer(c)
            return BranchOutputs(self.class_head(c), None)
        b = self.first(c, fused) if self.first_interaction else fused
        for layer in self.class_layers[1:]:
            c = layer(c)
        for layer in self.boundary_layers:
            b = layer(b)
        if self.second_interaction:
            c = ad.add(c, self.second(b, c))
        return BranchOutputs(self.class_head(c), self.boundary_head(b))
