"""Run configuration: defaults, validation, file loading and CLI overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from sgseg.errors import ConfigError

MODALITIES = "IKBD"
DENSE_MODALITIES = "IKB"
FUSION_VARIANTS = ("sgf+msaf", "only_sgf", "only_msaf", "cross+msaf")
LR_SCHEDULES = ("step", "smooth")


@dataclass
class RunConfig:
    # architecture
    dim_imu: int = 300
    dim_keypoints: int = 300
    dim_bbox: int = 240
    dim_device: int = 60
    heads: int = 20
    extractor_depth: int = 6
    fusion_depth: int = 4
    branch_depth: int = 3
    ffn_ratio: int = 4
    max_len: int = 512
    conv_kernel: int = 3
    boundary_conv_depth: int = 2
    boundary_conv_hidden: int = 8
    merge_kernel: int = 1
    lstm_bidirectional: bool = False
    # optimisation
    lr: float = 1e-4
    weight_decay: float = 1e-4
    warmup_epochs: int = 50
    decay_every: int = 50
    decay_factor: float = 0.5
    lr_schedule: str = "step"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 200
    # losses
    lambda1: float = 0.5
    lambda2: float = 0.2
    boundary_widen: int = 1
    inner_class_loss: bool = True
    inner_boundary_loss: bool = True
    final_boundary_loss: bool = True
    refined_final_loss: bool = False
    # refinement and evaluation
    alpha: float = 0.85
    window: int = 5
    iou_threshold: float = 0.5
    # ablation switches
    modalities: str = "IKBD"
    fusion: str = "sgf+msaf"
    mask_mode: str = "query"
    bottleneck_on_device: bool = False
    first_interaction: bool = True
    second_interaction: bool = True
    # run
    seed: int = 0
    threads: int = 1
    eval_fold: int = 0
    num_folds: int = 5
    checkpoint_every: int = 0
    variant: str = "default"
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    @property
    def fusion_dim(self) -> int:
        if "I" in self.modalities:
            return self.dim_imu
        if "K" in self.modalities:
            return self.dim_keypoints
        if "B" in self.modalities:
            return self.dim_bbox
        return self.dim_imu

    @property
    def boundary_enabled(self) -> bool:
        return self.lambda2 > 0

    def validate(self) -> None:
        mods = self.modalities
        if not mods or any(m not in MODALITIES for m in mods) or len(set(mods)) != len(mods):
            raise ConfigError(f"modalities must be a non-empty subset of {MODALITIES!r}, got {mods!r}")
        self.modalities = "".join(m for m in MODALITIES if m in mods)
        if self.fusion not in FUSION_VARIANTS:
            raise ConfigError(f"fusion must be one of {FUSION_VARIANTS}, got {self.fusion!r}")
        if self.mask_mode not in ("query", "key"):
            raise ConfigError(f"mask_mode must be 'query' or 'key', got {self.mask_mode!r}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        for name in ("heads", "fusion_depth", "batch_size", "epochs", "ffn_ratio", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.extractor_depth < 0:
            raise ConfigError(f"extractor_depth must be >= 0, got {self.extractor_depth}")
        if self.branch_depth < 2:
            raise ConfigError(f"branch_depth must be >= 2 (interactions need a first and last layer), got {self.branch_depth}")
        if not 0.0 <= self.lambda1 <= 1.0:
            raise ConfigError(f"lambda1 must lie in [0, 1], got {self.lambda1}")
        if self.lambda2 < 0:
            raise ConfigError(f"lambda2 must be >= 0, got {self.lambda2}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ConfigError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        if self.window < 0 or self.boundary_widen < 0:
            raise ConfigError("window and boundary_widen must be >= 0")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        for name in ("conv_kernel", "merge_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be odd and positive, got {k}")
        if not 0 <= self.eval_fold < self.num_folds:
            raise ConfigError(f"eval_fold {self.eval_fold} outside [0, {self.num_folds})")
        # flag conflicts
        uses_sgf = self.fusion in ("sgf+msaf", "only_sgf", "cross+msaf")
        if uses_sgf and "D" not in mods:
            raise ConfigError(
                f"conflict: fusion={self.fusion!r} needs sparse guidance but modalities={mods!r} lacks 'D'"
            )
        if self.fusion == "only_msaf" and not any(m in mods for m in DENSE_MODALITIES):
            raise ConfigError("conflict: fusion='only_msaf' needs at least one dense modality")
        if self.bottleneck_on_device and "D" not in mods:
            raise ConfigError("conflict: bottleneck_on_device=True but modalities lacks 'D'")
        if self.mask_mode == "key" and self.fusion == "cross+msaf":
            raise ConfigError("conflict: mask_mode='key' has no effect with fusion='cross+msaf' (mask disabled)")
        if self.refined_final_loss and not self.boundary_enabled:
            raise ConfigError("conflict: refined_final_loss needs the boundary branch (lambda2 > 0)")
        widths = {"I": self.dim_imu, "K": self.dim_keypoints, "B": self.dim_bbox}
        for m in mods:
            if m in widths and widths[m] % self.heads:
                raise ConfigError(f"width {widths[m]} of modality {m} not divisible by heads {self.heads}")
        if self.fusion_dim % self.heads:
            raise ConfigError(f"fusion width {self.fusion_dim} not divisible by heads {self.heads}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        return from_dict({**self.to_dict(), **changes})

    def provenance(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "modalities": self.modalities,
            "alpha": self.alpha,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "iou_threshold": self.iou_threshold,
        }


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def from_dict(values: dict[str, Any]) -> RunConfig:
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return RunConfig(**values)


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a JSON or YAML mapping; the caller decides which schema applies."""
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def coerce(key: str, raw: str, kind: str) -> Any:
    """Parse a ``--key value`` override according to the field's declared type."""
    try:
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "dict":
            return json.loads(raw)
        return raw
    except ValueError:
        raise ConfigError(f"invalid value {raw!r} for {key} ({kind})") from None


def field_kinds() -> dict[str, str]:
    return {name: str(kind) for name, kind in _FIELD_TYPES.items()}


def apply_overrides(base: dict[str, Any], pairs: list[tuple[str, str]]) -> dict[str, Any]:
    kinds = field_kinds()
    out = dict(base)
    for key, raw in pairs:
        key = key.replace("-", "_")
        if key not in kinds:
            raise ConfigError(f"unknown config key: {key}")
        out[key] = coerce(key, raw, kinds[key])
    return out


def toy_config(**changes) -> RunConfig:
    """Small model used for gradient checks, tests and the synthetic benchmarks."""
    values = dict(
        dim_imu=16,
        dim_keypoints=16,
        dim_bbox=16,
        dim_device=16,
        heads=4,
        extractor_depth=2,
        fusion_depth=1,
        branch_depth=2,
        max_len=128,
        lr=3e-3,
        weight_decay=1e-4,
        warmup_epochs=3,
        decay_every=10,
        batch_size=4,
        epochs=30,
        window=2,
    )
    values.update(changes)
    return from_dict(values)
