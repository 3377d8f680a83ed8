"""Inference with refinement, metric reports and segmentation timelines."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from sgseg.config import RunConfig
from sgseg.data import MultiModalSample, stack_batch
from sgseg.errors import ConfigError
from sgseg.metrics import F1Report, combine, evaluate_sequence
from sgseg.model import SegmentationModel

log = logging.getLogger(__name__)

REPORT_COLUMNS = ["variant", "class", "precision", "recall", "f1", "support", "metric",
                  "seed", "modalities", "alpha", "lambda1", "lambda2", "iou_threshold"]
_METRIC_COLUMNS = {"precision", "recall", "f1"}


@dataclass
class Prediction:
    sample_id: str
    labels: np.ndarray
    predicted: np.ndarray
    barriers: np.ndarray


@dataclass
class EvalResult:
    segmental: F1Report
    frame: F1Report
    predictions: list[Prediction] = field(default_factory=list)

    @property
    def summary(self) -> dict[str, float]:
        return {
            "segmental_f1": self.segmental.macro_f1,
            "frame_f1": self.frame.macro_f1,
        }

    def class_recall(self, cls: int, metric: str = "frame") -> float:
        report = self.frame if metric == "frame" else self.segmental
        c = report.counts.get(cls)
        return c.recall if c is not None else 0.0


def predict(model: SegmentationModel, samples: Sequence[MultiModalSample]) -> list[Prediction]:
    out = []
    for s in samples:
        batch, labels = stack_batch([s], model.cfg.modalities)
        pred, barriers, _ = model.predict(batch)
        out.append(Prediction(s.sample_id, labels[0], pred[0], barriers[0]))
    return out


def score(predictions: Sequence[Prediction], null_label: int | None, iou_threshold: float) -> EvalResult:
    seg, frame = [], []
    for p in predictions:
        s, f = evaluate_sequence(p.predicted, p.labels, null_label, iou_threshold)
        seg.append(s)
        frame.append(f)
    return EvalResult(combine(seg), combine(frame), list(predictions))


def evaluate(model: SegmentationModel, samples: Sequence[MultiModalSample], num_classes: int | None = None) -> EvalResult:
    if num_classes is not None and num_classes != model.num_classes:
        raise ConfigError(f"dataset has {num_classes} classes, checkpoint was trained on {model.num_classes}")
    null = samples[0].null_label if samples else None
    return score(predict(model, samples), null, model.cfg.iou_threshold)


def report_rows(result: EvalResult, cfg: RunConfig, variant: str | None = None,
                class_names: Sequence[str] | None = None) -> list[dict]:
    prov = cfg.provenance()
    name = variant if variant is not None else cfg.variant
    rows = []
    for metric, report in (("segmental", result.segmental), ("frame", result.frame)):
        for cls, c in report.per_class().items():
            label = class_names[cls] if class_names and cls < len(class_names) else str(cls)
            rows.append({"variant": name, "class": label, "precision": c.precision, "recall": c.recall,
                         "f1": c.f1, "support": c.support, "metric": metric, **prov})
        support = sum(report.counts[c].support for c in report.scored_classes)
        rows.append({"variant": name, "class": "macro", "precision": report.macro_precision,
                     "recall": report.macro_recall, "f1": report.macro_f1, "support": support,
                     "metric": metric, **prov})
    return rows


def write_report(path: str | Path, rows: Sequence[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.6f}" if k in _METRIC_COLUMNS and isinstance(v, float) else v)
                        for k, v in row.items()})
    return path


def write_timeline(path: str | Path, predictions: Sequence[Prediction]) -> Path:
    """Plot-ready per-frame CSV: sample, frame, ground truth, prediction, filtered boundary."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "frame", "ground_truth", "predicted", "boundary"])
        for p in predictions:
            for t, (g, q, b) in enumerate(zip(p.labels, p.predicted, p.barriers)):
                w.writerow([p.sample_id, t, int(g), int(q), f"{b:.6f}"])
    return path


def plot_timeline(path: str | Path, predictions: Sequence[Prediction], num_classes: int) -> Path | None:
    """Ribbon plot (ground truth over prediction per sample); skipped without matplotlib."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return None
    n = len(predictions)
    fig, axes = plt.subplots(n, 1, figsize=(10, 0.9 * n + 0.5), squeeze=False)
    for ax, p in zip(axes[:, 0], predictions):
        ax.imshow(np.stack([p.labels, p.predicted]), aspect="auto", interpolation="nearest",
                  cmap="tab10", vmin=0, vmax=max(num_classes - 1, 1))
        ax.set_yticks([0, 1], ["gt", "pred"])
        ax.set_xticks([])
        ax.set_title(p.sample_id, fontsize=8, loc="left")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
