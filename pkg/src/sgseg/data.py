"""Synthetic multi-modal sequences, the on-disk dataset format and fold splitting."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from sgseg.errors import ConfigError, ParseError, ValidationError
from sgseg.extract import ModalityStream

log = logging.getLogger(__name__)

MODALITY_FILES = {"I": "imu.csv", "K": "keypoints.csv", "B": "bbox.csv", "D": "device.csv"}
LABEL_FILE = "labels.csv"
MANIFEST = "manifest.json"
FORMAT_VERSION = 1


def channel_names(modality: str, count: int) -> list[str]:
    """Column names for one modality; extra channels get generic names."""
    if modality == "I":
        base = ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "quat_w", "quat_x", "quat_y", "quat_z"]
    elif modality == "K":
        base = [f"kp{j}_{axis}" for j in range(count // 2) for axis in "xy"]
    elif modality == "B":
        base = ["x1", "y1", "x2", "y2"]
    else:
        base = ["scanner", "printer"]
    names = base[:count]
    names += [f"spare_{i}" for i in range(count - len(names))]
    return names


@dataclass(frozen=True)
class GeneratorConfig:
    """Knobs of the synthetic generator. Class 0 is Null unless ``null_class_id`` says otherwise."""

    num_classes: int = 10
    length: int = 120
    num_samples: int = 20
    seed: int = 0
    mean_duration: float = 10.0
    duration_spread: float = 3.0  # class means spread evenly over mean +- spread
    null_mean_duration: float = 3.0
    null_prob: float = 0.5  # chance of a Null gap between two actions
    imu_channels: int = 12
    keypoint_channels: int = 34
    bbox_channels: int = 4
    device_channels: int = 2
    device_linked_class: int = 1
    device_twin_class: int | None = 2  # dense signature of the linked class copies this one
    twin_separation: float = 0.3
    device_miss_rate: float = 0.15
    device_min_coverage: float = 0.5
    noise_imu: float = 1.0
    noise_keypoints: float = 1.0
    noise_bbox: float = 1.0
    drift: float = 0.3
    null_class_id: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least one action class besides Null")
        if self.length < 1 or self.num_samples < 1:
            raise ConfigError("length and num_samples must be positive")
        if self.mean_duration - self.duration_spread < 1 or self.null_mean_duration < 1:
            raise ConfigError("durations must be >= 1 frame")
        if not 0 <= self.null_class_id < self.num_classes:
            raise ConfigError("null_class_id outside the class range")
        if self.device_linked_class == self.null_class_id or not 0 <= self.device_linked_class < self.num_classes:
            raise ConfigError("device_linked_class must be a non-Null class")
        twin = self.device_twin_class
        if twin is not None and (twin in (self.null_class_id, self.device_linked_class)
                                 or not 0 <= twin < self.num_classes):
            raise ConfigError("device_twin_class must be another non-Null class")
        if not 0 <= self.device_miss_rate <= 1 or not 0 < self.device_min_coverage <= 1:
            raise ConfigError("device_miss_rate must lie in [0, 1] and device_min_coverage in (0, 1]")
        if not 0 <= self.null_prob <= 1:
            raise ConfigError("null_prob must lie in [0, 1]")
        for name in ("noise_imu", "noise_keypoints", "noise_bbox", "drift", "twin_separation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if min(self.imu_channels, self.keypoint_channels, self.bbox_channels, self.device_channels) < 1:
            raise ConfigError("channel counts must be positive")

    @property
    def channels(self) -> dict[str, int]:
        return {"I": self.imu_channels, "K": self.keypoint_channels, "B": self.bbox_channels,
                "D": self.device_channels}

    @property
    def action_classes(self) -> list[int]:
        return [c for c in range(self.num_classes) if c != self.null_class_id]

    def class_mean_durations(self) -> dict[int, float]:
        actions = self.action_classes
        if len(actions) == 1:
            return {actions[0]: self.mean_duration}
        lo, hi = self.mean_duration - self.duration_spread, self.mean_duration + self.duration_spread
        return {c: lo + (hi - lo) * i / (len(actions) - 1) for i, c in enumerate(actions)}

    @classmethod
    def from_dict(cls, values: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown generator config key(s): {', '.join(unknown)}")
        return cls(**values)


# defaults of the desk-scale benchmark dataset: five actions plus Null
DEFAULT_DATASET = dict(num_classes=6, length=120, num_samples=20)


@dataclass
class MultiModalSample:
    sample_id: str
    streams: dict[str, ModalityStream]
    labels: np.ndarray  # [T] int
    null_label: int = 0
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        for m, s in self.streams.items():
            if s.values.shape[1] != self.labels.shape[0]:
                raise ValidationError(
                    f"sample {self.sample_id}: modality {m} has {s.values.shape[1]} frames, "
                    f"labels have {self.labels.shape[0]}"
                )

    @property
    def length(self) -> int:
        return int(self.labels.shape[0])

    def arrays(self) -> dict[str, np.ndarray]:
        """Modality name to [T, channels] array."""
        return {m: s.values[0] for m, s in self.streams.items()}


def _class_signatures(cfg: GeneratorConfig) -> dict[str, np.ndarray]:
    """Deterministic per-class patterns, fixed by the config seed and shared across samples."""
    rng = np.random.default_rng([cfg.seed, 7919])
    c = cfg.num_classes
    sig = {
        "I_offset": rng.standard_normal((c, cfg.imu_channels)),
        "I_amp": rng.uniform(0.5, 1.5, size=(c, cfg.imu_channels)),
        "I_freq": rng.uniform(0.05, 0.45, size=c),
        "K": rng.standard_normal((c, cfg.keypoint_channels)),
        "B": rng.standard_normal((c, cfg.bbox_channels)),
    }
    for key in sig:
        sig[key][cfg.null_class_id] *= 0.0 if key != "I_freq" else 1.0
    if cfg.device_twin_class is not None:
        a, b = cfg.device_linked_class, cfg.device_twin_class
        for key in ("I_offset", "K", "B"):
            delta = rng.standard_normal(sig[key].shape[1])
            delta *= cfg.twin_separation / max(np.linalg.norm(delta) / math.sqrt(delta.size), 1e-12)
            sig[key][a] = sig[key][b] + delta
        sig["I_amp"][a] = sig["I_amp"][b]
        sig["I_freq"][a] = sig["I_freq"][b]
    return sig


def _duration(rng: np.random.Generator, mean: float) -> int:
    """Geometric draw with the given mean, clamped to [ceil(mean/2), ceil(1.5 mean)]."""
    d = int(rng.geometric(1.0 / mean))
    return int(np.clip(d, math.ceil(mean / 2), math.ceil(1.5 * mean)))


def _label_sequence(cfg: GeneratorConfig, rng: np.random.Generator) -> np.ndarray:
    """Semi-Markov labels: actions in shuffled blocks, Null gaps between them.

    Each block visits every action once. Inside the first block, durations and
    gaps are capped so the block fits whenever the length allows every action
    its minimum duration; this guarantees that every action appears.
    """
    means = cfg.class_mean_durations()
    min_len = {c: math.ceil(m / 2) for c, m in means.items()}
    out: list[int] = []
    order = [int(c) for c in rng.permutation(cfg.action_classes)]
    first_block = True

    def gap():
        if rng.uniform() < cfg.null_prob:
            d = _duration(rng, cfg.null_mean_duration)
            if first_block:
                d = min(d, max(0, cfg.length - len(out) - sum(min_len[c] for c in order)))
            out.extend([cfg.null_class_id] * d)

    gap()
    while len(out) < cfg.length:
        if not order:
            first_block = False
            order = [int(c) for c in rng.permutation(cfg.action_classes)]
        cls = order.pop(0)
        d = _duration(rng, means[cls])
        if first_block:
            d = max(1, min(d, cfg.length - len(out) - sum(min_len[c] for c in order)))
        out.extend([cls] * d)
        gap()
    return np.asarray(out[: cfg.length], dtype=np.int64)


def _device_stream(cfg: GeneratorConfig, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Binary device channels that fire only inside linked-class segments."""
    from sgseg.refine import extract_segments

    d = np.zeros((labels.shape[0], cfg.device_channels))
    for seg in extract_segments(labels):
        if seg.label != cfg.device_linked_class or rng.uniform() < cfg.device_miss_rate:
            continue
        length = seg.end - seg.start + 1
        span = max(1, int(rng.integers(math.ceil(cfg.device_min_coverage * length), length + 1)))
        start = seg.start + int(rng.integers(0, length - span + 1))
        channel = int(rng.integers(0, cfg.device_channels))
        d[start: start + span, channel] = 1.0
    return d


def generate_sequence(cfg: GeneratorConfig, index: int = 0) -> MultiModalSample:
    """One synthetic sample; identical for identical (config, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    sig = _class_signatures(cfg)
    labels = _label_sequence(cfg, rng)
    t = np.arange(cfg.length, dtype=np.float64)

    freq = sig["I_freq"][labels][:, None]
    phase = rng.uniform(0, 2 * math.pi, size=cfg.imu_channels)
    imu = sig["I_offset"][labels] + sig["I_amp"][labels] * np.sin(2 * math.pi * freq * t[:, None] + phase)
    imu += cfg.noise_imu * rng.standard_normal(imu.shape)

    drift = np.cumsum(rng.standard_normal((cfg.length, cfg.keypoint_channels)), axis=0)
    drift *= cfg.drift / math.sqrt(cfg.length)
    keypoints = sig["K"][labels] + drift + cfg.noise_keypoints * rng.standard_normal(drift.shape)
    bbox = sig["B"][labels] + cfg.noise_bbox * rng.standard_normal((cfg.length, cfg.bbox_channels))
    device = _device_stream(cfg, labels, rng)

    streams = {
        m: ModalityStream(m, arr[None])
        for m, arr in (("I", imu), ("K", keypoints), ("B", bbox), ("D", device))
    }
    names = [f"action_{c}" if c != cfg.null_class_id else "Null" for c in range(cfg.num_classes)]
    return MultiModalSample(f"sample_{index:04d}", streams, labels, cfg.null_class_id, names)


def generate_dataset(cfg: GeneratorConfig) -> list[MultiModalSample]:
    return [generate_sequence(cfg, i) for i in range(cfg.num_samples)]


# on-disk format


def _fmt(v: float) -> str:
    return repr(float(v))


def save_dataset(samples: Sequence[MultiModalSample], root: str | Path,
                 generator: GeneratorConfig | None = None) -> Path:
    """Write one directory per sample plus a JSON manifest; output bytes depend only on the inputs."""
    if not samples:
        raise ValidationError("nothing to save")
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    first = samples[0]
    channels = {m: int(s.values.shape[-1]) for m, s in first.streams.items()}
    for sample in samples:
        sample_dir = root / sample.sample_id
        sample_dir.mkdir(exist_ok=True)
        for m, stream in sample.streams.items():
            with open(sample_dir / MODALITY_FILES[m], "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["frame"] + channel_names(m, channels[m]))
                for i, row in enumerate(stream.values[0]):
                    w.writerow([i] + [_fmt(v) for v in row])
        with open(sample_dir / LABEL_FILE, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame", "class_id"])
            for i, c in enumerate(sample.labels):
                w.writerow([i, int(c)])
    manifest = {
        "format_version": FORMAT_VERSION,
        "channels": channels,
        "class_names": first.class_names,
        "null_class_id": first.null_label,
        "samples": [{"id": s.sample_id, "frames": s.length} for s in samples],
    }
    if generator is not None:
        manifest["generator"] = asdict(generator)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def _read_csv(path: Path, expected: list[str], frames: int) -> np.ndarray:
    """Parse one per-frame CSV into [frames, len(expected)] floats."""
    if not path.exists():
        raise ParseError(f"{path}: missing file")
    text = path.read_text()
    if text and not text.endswith("\n"):
        raise ParseError(f"{path}: truncated (no final newline)")
    reader = csv.reader(text.splitlines())
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{path}:1: empty file") from None
    if not header or header[0] != "frame":
        raise ParseError(f"{path}:1: first column must be 'frame'")
    index = {name: i for i, name in enumerate(header)}
    missing = [c for c in expected if c not in index]
    if missing:
        raise ParseError(f"{path}:1: missing column(s) {missing}")
    extra = [c for c in header[1:] if c not in expected]
    if extra:
        log.warning("%s: ignoring unknown column(s) %s", path, extra)
    cols = [index[c] for c in expected]
    out = np.empty((frames, len(expected)))
    n = 0
    for line_no, row in enumerate(reader, start=2):
        if len(row) != len(header):
            raise ParseError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
        try:
            frame = int(row[0])
            values = [float(row[i]) for i in cols]
        except ValueError as exc:
            raise ParseError(f"{path}:{line_no}: {exc}") from None
        if frame != n:
            raise ParseError(f"{path}:{line_no}: expected frame {n}, got {frame}")
        if n >= frames:
            raise ValidationError(f"{path}: more than the {frames} frames listed in the manifest")
        if not all(math.isfinite(v) for v in values):
            raise ParseError(f"{path}:{line_no}: non-finite value")
        out[n] = values
        n += 1
    if n != frames:
        raise ValidationError(f"{path}: {n} frames, manifest lists {frames}")
    return out


def load_dataset(root: str | Path) -> list[MultiModalSample]:
    """Read a dataset written by :func:`save_dataset`; all samples validate or nothing is returned."""
    root = Path(root)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
    except FileNotFoundError:
        raise ValidationError(f"{root}: no {MANIFEST}") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{root / MANIFEST}:{exc.lineno}: {exc.msg}") from None
    try:
        channels = {m: int(c) for m, c in manifest["channels"].items()}
        names = list(manifest["class_names"])
        null = int(manifest["null_class_id"])
        entries = manifest["samples"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{root / MANIFEST}: malformed manifest ({exc})") from None
    if manifest.get("format_version", FORMAT_VERSION) > FORMAT_VERSION:
        raise ValidationError(f"dataset format {manifest['format_version']} is newer than supported")
    unknown = sorted(set(channels) - set(MODALITY_FILES))
    if unknown:
        raise ValidationError(f"unknown modalities in manifest: {unknown}")
    samples = []
    for entry in entries:
        sid, frames = entry["id"], int(entry["frames"])
        sample_dir = root / sid
        streams = {}
        for m, count in channels.items():
            try:
                values = _read_csv(sample_dir / MODALITY_FILES[m], channel_names(m, count), frames)
            except ValidationError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ValidationError(f"sample {sid}, modality {m}: {exc}") from None
            streams[m] = ModalityStream(m, values[None])
        labels = _read_csv(sample_dir / LABEL_FILE, ["class_id"], frames)[:, 0]
        if not np.array_equal(labels, np.round(labels)):
            raise ValidationError(f"sample {sid}: non-integer class ids")
        labels = labels.astype(np.int64)
        bad = labels[(labels < 0) | (labels >= len(names))]
        if bad.size:
            raise ValidationError(f"sample {sid}: unknown class id {int(bad[0])}")
        samples.append(MultiModalSample(sid, streams, labels, null, names))
    return samples


def split_folds(samples: Sequence[MultiModalSample], k: int, seed: int = 0):
    """k (train, test) partitions; membership follows a seeded hash of each sample id."""
    if k < 2:
        raise ConfigError(f"need at least 2 folds, got {k}")
    if k > len(samples):
        raise ConfigError(f"{k} folds requested for {len(samples)} samples")

    def key(s: MultiModalSample) -> str:
        return hashlib.sha256(f"{seed}:{s.sample_id}".encode()).hexdigest()

    ranked = sorted(samples, key=key)
    folds = []
    for i in range(k):
        test = [s for j, s in enumerate(ranked) if j % k == i]
        train = [s for j, s in enumerate(ranked) if j % k != i]
        folds.append((train, test))
    return folds


def stack_batch(samples: Sequence[MultiModalSample], modalities: str) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Stack equal-length samples into ({modality: [N, T, ch]}, labels [N, T])."""
    lengths = {s.length for s in samples}
    if len(lengths) != 1:
        raise ValidationError(f"batch mixes sequence lengths {sorted(lengths)}")
    batch = {m: np.stack([s.streams[m].values[0] for s in samples]) for m in modalities}
    return batch, np.stack([s.labels for s in samples])
