"""Time the compiled kernels against the pure-Python reference.

Run with ``python3 benchmarks/bench_kernels.py``; prints one row per kernel and
sequence length, and checks the two backends agree before timing them.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from sgseg import kernels


def _inputs(rng, length, classes):
    logits = rng.standard_normal((length, classes))
    barriers = np.clip(rng.beta(0.3, 2.0, size=length), 0.0, 1.0)
    labels = np.repeat(rng.integers(0, classes, size=length // 8 + 1), 8)[:length]
    return logits, barriers, labels


def _cases(logits, barriers, labels, window):
    return {
        "barrier_pool": lambda k: k.barrier_pool(logits, barriers, window),
        "barrier_matrix": lambda k: k.barrier_matrix(barriers, window),
        "run_lengths": lambda k: k.run_lengths(labels),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=0, atol=1e-12)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lengths", default="120,1000,5000")
    parser.add_argument("--classes", type=int, default=11)
    parser.add_argument("--window", type=int, default=5)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)

    if kernels.compiled is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<15}{'T':>7}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for length in (int(x) for x in args.lengths.split(",")):
        logits, barriers, labels = _inputs(rng, length, args.classes)
        for name, call in _cases(logits, barriers, labels, args.window).items():
            if name == "barrier_matrix" and length > 2000:
                continue  # dense T x T output; the cost is the allocation, not the loop
            if not _same(call(kernels.python), call(kernels.compiled)):
                raise SystemExit(f"{name}: backends disagree at T={length}")
            number = max(1, 2000 // length)
            py = min(timeit.repeat(lambda: call(kernels.python), number=number, repeat=args.repeat)) / number
            cy = min(timeit.repeat(lambda: call(kernels.compiled), number=number, repeat=args.repeat)) / number
            print(f"{name:<15}{length:>7}{py * 1e3:>12.3f}{cy * 1e3:>12.3f}{py / cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
