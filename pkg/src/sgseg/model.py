"""Full segmentation network: extractors, bottlenecks, fusion, interactive branches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from sgseg import autodiff as ad
from sgseg import losses as L
from sgseg import nn
from sgseg.autodiff import Tensor
from sgseg.branches import InteractiveBranches
from sgseg.config import RunConfig
from sgseg.errors import ConfigError, DimensionError
from sgseg.extract import Bottleneck, BottleneckOutputs, DenseExtractor, SparseExtractor
from sgseg.fusion import FusionStack, build_mask
from sgseg.refine import barrier_pooling_tensor, filter_boundaries


@dataclass
class ModelOutputs:
    class_logits: Tensor
    boundary_logits: Tensor | None
    inner: dict[str, BottleneckOutputs]
    mask: np.ndarray | None
    fused: Tensor


@dataclass
class LossBreakdown:
    class_inner: Tensor | None
    class_final: Tensor
    boundary_inner: Tensor | None
    boundary_final: Tensor | None
    total: Tensor
    values: dict[str, float] = field(default_factory=dict)


class SegmentationModel(nn.Module):
    """Multi-modal action segmenter guided by sparse device signals."""

    def __init__(self, cfg: RunConfig, channels: Mapping[str, int], num_classes: int, seed: int | None = None):
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        missing = [m for m in cfg.modalities if m not in channels]
        if missing:
            raise ConfigError(f"no channel count for modalities {missing}")
        self.cfg = cfg
        self.num_classes = num_classes
        self.channels = {m: int(channels[m]) for m in cfg.modalities}
        width = cfg.fusion_dim
        self.width = width
        dims = {"I": cfg.dim_imu, "K": cfg.dim_keypoints, "B": cfg.dim_bbox}
        boundary = cfg.boundary_enabled
        self.extractors = {}
        self.bottlenecks = {}
        self.lifts = {}
        for m in "IKB":
            if m not in cfg.modalities:
                continue
            self.extractors[m] = DenseExtractor(
                self.channels[m], dims[m], cfg.extractor_depth, cfg.heads, cfg.max_len, rng, cfg.ffn_ratio
            )
            self.bottlenecks[m] = self._bottleneck(dims[m], rng)
            if dims[m] != width:
                self.lifts[m] = nn.Affine(dims[m], width, rng)
        if "D" in cfg.modalities:
            self.extractors["D"] = SparseExtractor(self.channels["D"], cfg.dim_device, rng)
            if cfg.bottleneck_on_device:
                self.bottlenecks["D"] = self._bottleneck(cfg.dim_device, rng)
            self.lifts["D"] = nn.Affine(cfg.dim_device, width, rng)
        self.fusion = FusionStack(width, cfg.heads, cfg.fusion_depth, rng, cfg.fusion, cfg.mask_mode, cfg.merge_kernel)
        self.branches = InteractiveBranches(
            width, cfg.heads, cfg.branch_depth, num_classes, rng, cfg.ffn_ratio,
            boundary=boundary, first_interaction=cfg.first_interaction,
            second_interaction=cfg.second_interaction,
        )

    def _bottleneck(self, width: int, rng) -> Bottleneck:
        cfg = self.cfg
        return Bottleneck(width, self.num_classes, rng, cfg.conv_kernel, cfg.boundary_conv_depth,
                          cfg.boundary_conv_hidden, cfg.lstm_bidirectional)

    def _check_batch(self, batch: Mapping[str, np.ndarray]) -> tuple[int, int]:
        shapes = {}
        for m in self.cfg.modalities:
            if m not in batch:
                raise DimensionError(f"batch lacks modality {m}")
            arr = batch[m]
            if arr.ndim != 3 or arr.shape[-1] != self.channels[m]:
                raise DimensionError(f"modality {m}: expected [N, T, {self.channels[m]}], got {arr.shape}")
            shapes[m] = arr.shape[:2]
        if len(set(shapes.values())) != 1:
            raise DimensionError(f"modalities disagree on [N, T]: {shapes}")
        return next(iter(shapes.values()))

    def __call__(self, batch: Mapping[str, np.ndarray], keep_weights: bool = False) -> ModelOutputs:
        cfg = self.cfg
        n, t = self._check_batch(batch)
        with_boundary = cfg.boundary_enabled
        inner: dict[str, BottleneckOutputs] = {}
        feats: dict[str, Tensor] = {}
        for m in "IKB":
            if m not in cfg.modalities:
                continue
            out = self.bottlenecks[m](self.extractors[m](batch[m]), with_boundary=with_boundary)
            inner[m] = out
            f = out.features
            feats[m] = self.lifts[m](f) if m in self.lifts else f

        guidance = mask = None
        if "D" in cfg.modalities:
            mask = build_mask(batch["D"])
            f_d = self.extractors["D"](batch["D"])
            if "D" in self.bottlenecks:
                out = self.bottlenecks["D"](f_d, with_boundary=with_boundary)
                inner["D"] = out
                f_d = out.features
            guidance = self.lifts["D"](f_d)

        motion = feats.get("I")
        spatial = None
        for m in "KB":
            if m in feats:
                spatial = feats[m] if spatial is None else ad.add(spatial, feats[m])
        if motion is None and spatial is None:
            motion = spatial = Tensor(np.zeros((n, t, self.width)))
        elif motion is None:
            motion = spatial
        elif spatial is None:
            spatial = motion

        fused = self.fusion(motion, spatial, guidance, mask, keep_weights=keep_weights)
        branch = self.branches(fused)
        return ModelOutputs(branch.class_logits, branch.boundary_logits, inner, mask, fused)

    def refined_logits(self, outputs: ModelOutputs) -> np.ndarray:
        """Class logits after boundary filtering and barrier pooling."""
        from sgseg.refine import local_barrier_pooling

        barriers = self.barriers(outputs)
        return local_barrier_pooling(outputs.class_logits.data, barriers, self.cfg.window)

    def barriers(self, outputs: ModelOutputs) -> np.ndarray:
        n, t = outputs.class_logits.shape[:2]
        if outputs.boundary_logits is None:
            return np.zeros((n, t))
        return filter_boundaries(outputs.boundary_logits, self.cfg.alpha)

    def predict(self, batch: Mapping[str, np.ndarray]) -> tuple[np.ndarray, np.ndarray, ModelOutputs]:
        """(refined labels [N, T], filtered barriers [N, T], raw outputs)."""
        outputs = self(batch)
        refined = self.refined_logits(outputs)
        return refined.argmax(axis=-1), self.barriers(outputs), outputs


def compute_losses(model: SegmentationModel, outputs: ModelOutputs, labels: np.ndarray,
                   null_label: int | None) -> LossBreakdown:
    cfg = model.cfg
    boundary = cfg.boundary_enabled
    targets = L.boundary_targets_from_labels(labels, cfg.boundary_widen, null_label) if boundary else None
    class_inner = boundary_inner = boundary_final = None
    if outputs.inner:
        ci, bi = L.inner_losses(outputs.inner, labels, targets, null_label, with_boundary=boundary)
        class_inner = ci if cfg.inner_class_loss else None
        boundary_inner = bi if (boundary and cfg.inner_boundary_loss) else None
    logits = outputs.class_logits
    if cfg.refined_final_loss and outputs.boundary_logits is not None:
        logits = barrier_pooling_tensor(logits, model.barriers(outputs), cfg.window)
    class_final = L.frame_class_loss(ad.softmax_lastdim(logits), labels, null_label)
    if boundary and cfg.final_boundary_loss and outputs.boundary_logits is not None:
        boundary_final = L.frame_boundary_loss(ad.sigmoid(outputs.boundary_logits), targets, labels, null_label)
    total = L.total_loss(class_inner, class_final, boundary_inner, boundary_final,
                         L.LossWeights(cfg.lambda1, cfg.lambda2))

    def val(x):
        return float(x.data) if x is not None else 0.0

    values = {
        "L_c_inner": val(class_inner),
        "L_c_final": val(class_final),
        "L_b_inner": val(boundary_inner),
        "L_b_final": val(boundary_final),
        "total": val(total),
    }
    return LossBreakdown(class_inner, class_final, boundary_inner, boundary_final, total, values)
