"""Pure-Python reference kernels (used when the compiled module is unavailable)."""

import numpy as np


def barrier_pool(logits, barriers, window):
    """Barrier-weighted local average of ``logits`` [T, C] over +-``window`` frames.

    The weight between frames t and s is the product of ``1 - barriers[u]`` over
    frames u strictly between them.
    """
    logits = np.asarray(logits, dtype=np.float64)
    barriers = np.asarray(barriers, dtype=np.float64)
    t_len, n_cls = logits.shape
    out = np.zeros_like(logits)
    for t in range(t_len):
        acc = [0.0] * n_cls
        total = 1.0
        row = logits[t]
        for c in range(n_cls):
            acc[c] = row[c]
        for step in (1, -1):
            w = 1.0
            s = t + step
            for _ in range(window):
                if s < 0 or s >= t_len:
                    break
                if s != t + step:
                    w *= 1.0 - barriers[s - step]
                if w == 0.0:
                    break
                total += w
                row = logits[s]
                for c in range(n_cls):
                    acc[c] += w * row[c]
                s += step
        for c in range(n_cls):
            out[t, c] = acc[c] / total
    return out


def barrier_matrix(barriers, window):
    """Row-normalised [T, T] matrix M with ``barrier_pool(x) == M @ x``."""
    barriers = np.asarray(barriers, dtype=np.float64)
    t_len = barriers.shape[0]
    m = np.zeros((t_len, t_len))
    for t in range(t_len):
        m[t, t] = 1.0
        for step in (1, -1):
            w = 1.0
            s = t + step
            for _ in range(window):
                if s < 0 or s >= t_len:
                    break
                if s != t + step:
                    w *= 1.0 - barriers[s - step]
                if w == 0.0:
                    break
                m[t, s] = w
                s += step
        m[t] /= m[t].sum()
    return m


def run_lengths(labels):
    """Maximal runs of equal values as (values, starts, ends) with inclusive ends."""
    labels = np.asarray(labels, dtype=np.int64)
    values, starts, ends = [], [], []
    n = labels.shape[0]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and labels[j + 1] == labels[i]:
            j += 1
        values.append(labels[i])
        starts.append(i)
        ends.append(j)
        i = j + 1
    return (np.array(values, dtype=np.int64), np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64))
