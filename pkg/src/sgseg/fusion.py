"""Sparse guided cross-modal fusion: validity mask, SGF, MSAF and the stage stack."""

from __future__ import annotations

import numpy as np

from sgseg import autodiff as ad
from sgseg import nn
from sgseg.autodiff import Tensor
from sgseg.errors import ConfigError, DimensionError
from sgseg.extract import ModalityStream, check_binary


def build_mask(device) -> np.ndarray:
    """Per-frame OR over device channels: 1 where any device is active.

    Accepts a :class:`ModalityStream` or an array shaped [T, ch] or [N, T, ch];
    returns [T] or [N, T] accordingly.
    """
    values = device.values if isinstance(device, ModalityStream) else np.asarray(device)
    check_binary(values, "device stream")
    return (values != 0).any(axis=-1).astype(np.float64)


class FusionStage(nn.Module):
    """One SGF step followed by one MSAF step.

    The same masked attention serves both streams in SGF, and the same cross
    attention and merge convolution serve both directions in MSAF, so the
    stage is symmetric under swapping the motion and spatial streams.
    """

    def __init__(self, width: int, heads: int, rng: np.random.Generator, variant: str = "sgf+msaf",
                 mask_mode: str = "query", merge_kernel: int = 1):
        self.variant = variant
        cfg = nn.AttentionConfig(width, heads, mask_mode)
        self.guided_attn = nn.MultiHeadAttention(cfg, rng) if variant != "only_msaf" else None
        self.cross_attn = nn.MultiHeadAttention(cfg, rng) if variant != "only_sgf" else None
        self.merge = nn.Conv1d(width, width, merge_kernel, rng) if variant != "only_sgf" else None

    def sgf(self, motion: Tensor, spatial: Tensor, guidance: Tensor, mask, keep_weights: bool = False):
        if not (motion.shape == spatial.shape == guidance.shape):
            raise DimensionError(f"sgf widths differ: {motion.shape}, {spatial.shape}, {guidance.shape}")
        if self.variant == "cross+msaf":
            mask = None
        motion_d = ad.add(motion, guidance)
        spatial_d = ad.add(spatial, guidance)
        m = ad.add(self.guided_attn(guidance, motion_d, mask=mask, keep_weights=keep_weights), motion_d)
        motion_weights = self.guided_attn.last_weights
        s = ad.add(self.guided_attn(guidance, spatial_d, mask=mask, keep_weights=keep_weights), spatial_d)
        if keep_weights:
            self.sgf_weights = (motion_weights, self.guided_attn.last_weights)
        return m, s

    def msaf(self, motion: Tensor, spatial: Tensor):
        if motion.shape != spatial.shape:
            raise DimensionError(f"msaf stream shapes differ: {motion.shape} vs {spatial.shape}")
        motion_to_spatial = self.cross_attn(spatial, motion)  # queries from S, keys/values from M
        spatial_to_motion = self.cross_attn(motion, spatial)
        m_sum = ad.add(motion_to_spatial, motion)
        s_sum = ad.add(spatial_to_motion, spatial)
        return ad.add(self.merge(m_sum), m_sum), ad.add(self.merge(s_sum), s_sum)

    def __call__(self, motion: Tensor, spatial: Tensor, guidance: Tensor | None, mask,
                 keep_weights: bool = False):
        if self.variant != "only_msaf":
            motion, spatial = self.sgf(motion, spatial, guidance, mask, keep_weights)
        if self.variant != "only_sgf":
            motion, spatial = self.msaf(motion, spatial)
        return motion, spatial


class FusionStack(nn.Module):
    def __init__(self, width: int, heads: int, depth: int, rng: np.random.Generator,
                 variant: str = "sgf+msaf", mask_mode: str = "query", merge_kernel: int = 1):
        if depth < 1:
            raise ConfigError(f"fusion depth must be >= 1, got {depth}")
        self.stages = [FusionStage(width, heads, rng, variant, mask_mode, merge_kernel) for _ in range(depth)]

    def __call__(self, motion: Tensor, spatial: Tensor, guidance: Tensor | None, mask,
                 keep_weights: bool = False) -> Tensor:
        for stage in self.stages:
            motion, spatial = stage(motion, spatial, guidance, mask, keep_weights)
        return ad.add(motion, spatial)
