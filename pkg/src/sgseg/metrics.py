"""Segmental and frame-level F1 scores."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from sgseg.errors import ConfigError, DimensionError
from sgseg.refine import Segment, extract_segments


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        # count form of the harmonic mean; exact (not one ulp off) when fp == fn
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if self.tp else 0.0

    @property
    def support(self) -> int:
        return self.tp + self.fn


def f1_score(precision: float, recall: float) -> float:
    if precision == recall:
        return precision
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


@dataclass
class F1Report:
    counts: dict[int, ClassCounts] = field(default_factory=dict)

    def merge(self, other: "F1Report") -> "F1Report":
        for cls, c in other.counts.items():
            mine = self.counts.setdefault(cls, ClassCounts())
            mine.tp += c.tp
            mine.fp += c.fp
            mine.fn += c.fn
        return self

    @property
    def scored_classes(self) -> list[int]:
        """Classes with ground-truth support; only these enter the macro average."""
        return sorted(c for c, v in self.counts.items() if v.support > 0)

    @property
    def macro_precision(self) -> float:
        cls = self.scored_classes
        return float(np.mean([self.counts[c].precision for c in cls])) if cls else 0.0

    @property
    def macro_recall(self) -> float:
        cls = self.scored_classes
        return float(np.mean([self.counts[c].recall for c in cls])) if cls else 0.0

    @property
    def macro_f1(self) -> float:
        cls = self.scored_classes
        return float(np.mean([self.counts[c].f1 for c in cls])) if cls else 0.0

    def per_class(self) -> dict[int, ClassCounts]:
        return {c: self.counts[c] for c in sorted(self.counts)}


def segment_iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start) + 1
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start) + 1
    return inter / union


def match_segments(pred: Sequence[Segment], gt: Sequence[Segment], iou_threshold: float) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of same-class segments by descending IoU.

    Ties go to the earlier predicted start, then the earlier ground-truth start.
    Returns (pred index, gt index) pairs.
    """
    candidates = []
    for i, p in enumerate(pred):
        for j, g in enumerate(gt):
            if p.label != g.label:
                continue
            iou = segment_iou(p, g)
            if iou >= iou_threshold:
                candidates.append((-iou, p.start, g.start, i, j))
    candidates.sort()
    used_p, used_g, pairs = set(), set(), []
    for _, _, _, i, j in candidates:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j))
    return pairs


def segmental_f1(pred: Sequence[Segment], gt: Sequence[Segment], iou_threshold: float = 0.5) -> F1Report:
    """Per-class TP/FP/FN where each ground-truth segment yields at most one TP."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ConfigError(f"iou_threshold must lie in (0, 1], got {iou_threshold}")
    pairs = match_segments(pred, gt, iou_threshold)
    counts: dict[int, ClassCounts] = defaultdict(ClassCounts)
    for s in gt:
        counts[s.label].fn += 1
    for s in pred:
        counts[s.label].fp += 1
    for i, j in pairs:
        cls = gt[j].label
        counts[cls].tp += 1
        counts[cls].fp -= 1
        counts[cls].fn -= 1
    return F1Report(dict(counts))


def frame_f1(pred_labels, gt_labels, null_label: int | None = None) -> F1Report:
    """Frame-level per-class counts; frames whose ground truth is Null are ignored."""
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise DimensionError(f"label sequences differ in shape: {pred.shape} vs {gt.shape}")
    keep = np.ones(gt.shape, dtype=bool) if null_label is None else gt != null_label
    pred, gt = pred[keep], gt[keep]
    counts: dict[int, ClassCounts] = {}
    for cls in np.union1d(np.unique(pred), np.unique(gt)):
        if null_label is not None and cls == null_label:
            continue
        p, g = pred == cls, gt == cls
        counts[int(cls)] = ClassCounts(int((p & g).sum()), int((p & ~g).sum()), int((~p & g).sum()))
    return F1Report(counts)


def frame_macro_f1(pred_labels, gt_labels, null_label: int | None = None) -> float:
    return frame_f1(pred_labels, gt_labels, null_label).macro_f1


def evaluate_sequence(pred_labels, gt_labels, null_label: int | None, iou_threshold: float) -> tuple[F1Report, F1Report]:
    """Segment- and frame-level counts for one sequence.

    Predictions on frames whose ground truth is Null are reset to Null, so
    those frames drop out of both metrics.
    """
    pred = np.array(pred_labels, dtype=np.int64)
    gt = np.asarray(gt_labels, dtype=np.int64)
    if null_label is not None:
        pred[gt == null_label] = null_label
    seg = segmental_f1(extract_segments(pred, null_label), extract_segments(gt, null_label), iou_threshold)
    return seg, frame_f1(pred, gt, null_label)


def combine(reports: Iterable[F1Report]) -> F1Report:
    total = F1Report()
    for r in reports:
        total.merge(r)
    return total
