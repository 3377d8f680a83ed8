"""Brute-force reference implementations used by several test modules."""

import numpy as np


def iou(a, b):
    inter = min(a[2], b[2]) - max(a[1], b[1]) + 1
    if inter <= 0:
        return 0.0
    return inter / (max(a[2], b[2]) - min(a[1], b[1]) + 1)


def best_matching(pred, gt, thr):
    """Largest number of one-to-one same-class pairs with IoU >= thr, by exhaustive search."""

    def search(i, used):
        if i == len(pred):
            return 0
        best = search(i + 1, used)  # leave pred i unmatched
        for j, g in enumerate(gt):
            if j not in used and pred[i][0] == g[0] and iou(pred[i], g) >= thr:
                best = max(best, 1 + search(i + 1, used | {j}))
        return best

    return search(0, frozenset())


def brute_segmental_counts(pred, gt, thr):
    """Per-class (tp, fp, fn) from exhaustive matching, done class by class."""
    out = {}
    for cls in {s[0] for s in pred} | {s[0] for s in gt}:
        p = [s for s in pred if s[0] == cls]
        g = [s for s in gt if s[0] == cls]
        tp = best_matching(p, g, thr)
        out[cls] = (tp, len(p) - tp, len(g) - tp)
    return out


def random_segments(rng, max_segments=6, num_classes=4, max_len=5):
    """Ordered non-overlapping segments with random gaps."""
    segs, t = [], 0
    for _ in range(rng.integers(0, max_segments + 1)):
        t += int(rng.integers(0, 3))
        length = int(rng.integers(1, max_len + 1))
        segs.append((int(rng.integers(0, num_classes)), t, t + length - 1))
        t += length
    return segs


def brute_frame_counts(pred, gt, null_label):
    """Per-class frame (tp, fp, fn) by explicit loop over frames."""
    out = {}
    for p, g in zip(pred, gt):
        if g == null_label:
            continue
        for cls in {int(p), int(g)} - {null_label}:
            tp, fp, fn = out.get(cls, (0, 0, 0))
            if p == cls and g == cls:
                tp += 1
            elif p == cls:
                fp += 1
            else:
                fn += 1
            out[cls] = (tp, fp, fn)
    return out


def moving_average(x, window):
    """Centered moving average with the window truncated at the ends."""
    t = x.shape[0]
    return np.stack([x[max(0, i - window): i + window + 1].mean(axis=0) for i in range(t)])
