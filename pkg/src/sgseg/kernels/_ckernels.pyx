# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the per-frame kernels in ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def barrier_pool(logits, barriers, Py_ssize_t window):
    cdef double[:, ::1] x = np.ascontiguousarray(logits, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(barriers, dtype=np.float64)
    cdef Py_ssize_t t_len = x.shape[0], n_cls = x.shape[1]
    out_arr = np.empty((t_len, n_cls), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, s, c, k, step_i
    cdef int step
    cdef double w, total
    for t in range(t_len):
        total = 1.0
        for c in range(n_cls):
            out[t, c] = x[t, c]
        for step_i in range(2):
            step = 1 if step_i == 0 else -1
            w = 1.0
            s = t + step
            for k in range(window):
                if s < 0 or s >= t_len:
                    break
                if k > 0:
                    w *= 1.0 - b[s - step]
                if w == 0.0:
                    break
                total += w
                for c in range(n_cls):
                    out[t, c] += w * x[s, c]
                s += step
        for c in range(n_cls):
            out[t, c] /= total
    return out_arr


def barrier_matrix(barriers, Py_ssize_t window):
    cdef double[::1] b = np.ascontiguousarray(barriers, dtype=np.float64)
    cdef Py_ssize_t t_len = b.shape[0]
    m_arr = np.zeros((t_len, t_len), dtype=np.float64)
    cdef double[:, ::1] m = m_arr
    cdef Py_ssize_t t, s, k, step_i
    cdef int step
    cdef double w, total
    for t in range(t_len):
        m[t, t] = 1.0
        total = 1.0
        for step_i in range(2):
            step = 1 if step_i == 0 else -1
            w = 1.0
            s = t + step
            for k in range(window):
                if s < 0 or s >= t_len:
                    break
                if k > 0:
                    w *= 1.0 - b[s - step]
                if w == 0.0:
                    break
                m[t, s] = w
                total += w
                s += step
        for s in range(t_len):
            m[t, s] /= total
    return m_arr


def run_lengths(labels):
    cdef cnp.int64_t[::1] lab = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = lab.shape[0], i, count = 0
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty.copy(), empty.copy()
    for i in range(1, n):
        if lab[i] != lab[i - 1]:
            count += 1
    count += 1
    values_arr = np.empty(count, dtype=np.int64)
    starts_arr = np.empty(count, dtype=np.int64)
    ends_arr = np.empty(count, dtype=np.int64)
    cdef cnp.int64_t[::1] values = values_arr, starts = starts_arr, ends = ends_arr
    cdef Py_ssize_t k = 0
    values[0] = lab[0]
    starts[0] = 0
    for i in range(1, n):
        if lab[i] != lab[i - 1]:
            ends[k] = i - 1
            k += 1
            values[k] = lab[i]
            starts[k] = i
    ends[k] = n - 1
    return values_arr, starts_arr, ends_arr
