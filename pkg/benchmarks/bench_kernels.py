"""Timing comparison of the numba-jitted kernels against the numpy fallbacks.

Problem sizes mirror the default pipeline: the grid sweep covers the full
0.05-step threshold lattice over a 1000-example dev split, and the training
problem matches one verifier field over the default train split.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
Set FIELDWISE_NUMBA=0 to check what the fallback-only configuration does.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fieldwise import _kernels


def grid_problem(n_fields: int = 6000, step: float = 0.05, seed: int = 0):
    rng = np.random.default_rng(seed)
    values = np.linspace(0.0, 1.0, round(1 / step) + 1)
    tks, tts, dms = [], [], []
    for tk in values:
        for tt in values:
            if tt < tk:
                continue
            for dm in values:
                tks.append(tk)
                tts.append(tt)
                dms.append(dm)
    return (
        rng.random(n_fields),
        rng.random(n_fields),
        rng.integers(0, 2, size=(n_fields, 3)).astype(np.int64),
        rng.integers(0, 2, size=(n_fields, 3)).astype(np.int64),
        rng.integers(0, 2, size=n_fields).astype(np.int64),
        np.array(tks),
        np.array(tts),
        np.array(dms),
    )


def logreg_problem(n: int = 48000, d: int = 8, seed: int = 0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    w = rng.normal(size=d)
    y = (1.0 / (1.0 + np.exp(-(X @ w))) > rng.random(n)).astype(np.float64)
    return X, y


def timeit(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    grid_args = grid_problem()
    X, y = logreg_problem()

    rows = []
    if _kernels.USE_NUMBA:
        # warm the JIT before timing
        _kernels._grid_counts_numba(*[np.ascontiguousarray(a) for a in grid_args])
        _kernels._logreg_fit_numba(X, y, 5, 0.3, 1e-4)
        grid_numba = timeit(lambda: _kernels._grid_counts_numba(*grid_args), args.repeats)
        fit_numba = timeit(lambda: _kernels._logreg_fit_numba(X, y, 300, 0.3, 1e-4), args.repeats)
    else:
        grid_numba = fit_numba = None

    grid_numpy = timeit(lambda: _kernels._grid_counts_numpy(*grid_args), args.repeats)
    fit_numpy = timeit(lambda: _kernels._logreg_fit_numpy(X, y, 300, 0.3, 1e-4), args.repeats)

    rows.append(("threshold grid sweep (4851 cfg x 6000 fields)", grid_numba, grid_numpy))
    rows.append(("logistic fit (48k x 8, 300 epochs)", fit_numba, fit_numpy))

    print(f"{'kernel':<48}{'numba':>10}{'numpy':>10}{'speedup':>9}")
    for name, t_numba, t_numpy in rows:
        if t_numba is None:
            print(f"{name:<48}{'n/a':>10}{t_numpy:>9.3f}s{'':>9}")
        else:
            print(f"{name:<48}{t_numba:>9.3f}s{t_numpy:>9.3f}s{t_numpy / t_numba:>8.1f}x")
    if not _kernels.USE_NUMBA:
        print("numba path disabled (FIELDWISE_NUMBA=0 or numba unavailable)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
