"""Hot numeric kernels with numba-jitted and pure-numpy implementations.

The two hot loops in the package are full-batch logistic-regression training
(verifier) and the threshold grid sweep (policy tuning). Both ship in two
variants: numba @njit kernels by default, pure numpy when the environment
variable FIELDWISE_NUMBA=0 is set (or numba is missing). numba itself is
imported lazily on first kernel call so that string-only commands (e.g. the
canonicalize CLI) never pay its import cost.

Grid counts are pure integer accumulations, so both paths select identical
configurations; training weights may differ in the last few bits because the
summation order differs. benchmarks/bench_kernels.py times the two paths.
"""

from __future__ import annotations

import os

import numpy as np

_EPS = 1e-12

USE_NUMBA = os.environ.get("FIELDWISE_NUMBA", "1") != "0"

_numba_kernels: dict | None = None


def _logreg_fit_numpy(X: np.ndarray, y: np.ndarray, epochs: int, lr: float, l2: float):
    n, d = X.shape
    w = np.zeros(d, dtype=np.float64)
    b = 0.0
    losses = np.zeros(epochs, dtype=np.float64)
    with np.errstate(over="ignore"):
        for t in range(epochs):
            p = 1.0 / (1.0 + np.exp(-(X @ w + b)))
            pc = np.clip(p, _EPS, 1.0 - _EPS)
            losses[t] = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc)) + 0.5 * l2 * float(w @ w)
            g = p - y
            w = w - lr * (X.T @ g / n + l2 * w)
            b = b - lr * float(np.mean(g))
    return w, b, losses


def _grid_counts_numpy(
    p_base: np.ndarray,
    p_star: np.ndarray,
    base_c: np.ndarray,
    star_c: np.ndarray,
    null_fn: np.ndarray,
    tau_keep: np.ndarray,
    tau_take: np.ndarray,
    delta_margin: np.ndarray,
) -> np.ndarray:
    n_cfg = tau_keep.shape[0]
    out = np.zeros((n_cfg, 3), dtype=np.int64)
    gain = p_star - p_base
    better = p_star > p_base
    base64 = base_c.astype(np.int64)
    star64 = star_c.astype(np.int64)
    null64 = null_fn.astype(np.int64)
    for g in range(n_cfg):
        override = (p_star >= tau_take[g]) & (gain >= delta_margin[g]) & better
        keep = ~override & (p_base >= tau_keep[g])
        fallback = ~override & ~keep & (p_star >= tau_keep[g])
        star_sel = override | fallback
        abstain = ~star_sel & ~keep
        out[g, 0] = star64[star_sel, 0].sum() + base64[keep, 0].sum()
        out[g, 1] = star64[star_sel, 1].sum() + base64[keep, 1].sum()
        out[g, 2] = star64[star_sel, 2].sum() + base64[keep, 2].sum() + null64[abstain].sum()
    return out


def _build_numba_kernels() -> dict | None:
    """Compile the jitted variants on first use; None if numba is unavailable."""
    global _numba_kernels, USE_NUMBA
    if _numba_kernels is not None:
        return _numba_kernels
    if not USE_NUMBA:
        return None
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - mirror ships numba, but stay importable
        USE_NUMBA = False
        return None

    @njit(cache=True)
    def logreg_fit_numba(X, y, epochs, lr, l2):
        n, d = X.shape
        w = np.zeros(d, dtype=np.float64)
        gw = np.zeros(d, dtype=np.float64)
        b = 0.0
        losses = np.zeros(epochs, dtype=np.float64)
        for t in range(epochs):
            loss = 0.0
            gb = 0.0
            for j in range(d):
                gw[j] = 0.0
            for i in range(n):
                z = b
                for j in range(d):
                    z += X[i, j] * w[j]
                p = 1.0 / (1.0 + np.exp(-z))
                pc = min(max(p, _EPS), 1.0 - _EPS)
                loss += -(y[i] * np.log(pc) + (1.0 - y[i]) * np.log(1.0 - pc))
                g = p - y[i]
                for j in range(d):
                    gw[j] += X[i, j] * g
                gb += g
            reg = 0.0
            for j in range(d):
                reg += w[j] * w[j]
            losses[t] = loss / n + 0.5 * l2 * reg
            for j in range(d):
                w[j] -= lr * (gw[j] / n + l2 * w[j])
            b -= lr * (gb / n)
        return w, b, losses

    @njit(cache=True)
    def grid_counts_numba(p_base, p_star, base_c, star_c, null_fn, tau_keep, tau_take, delta_margin):
        n_cfg = tau_keep.shape[0]
        n = p_base.shape[0]
        out = np.zeros((n_cfg, 3), dtype=np.int64)
        for g in range(n_cfg):
            tk = tau_keep[g]
            tt = tau_take[g]
            dm = delta_margin[g]
            tp = 0
            fp = 0
            fn = 0
            for i in range(n):
                pb = p_base[i]
                ps = p_star[i]
                if ps >= tt and (ps - pb) >= dm and ps > pb:
                    tp += star_c[i, 0]
                    fp += star_c[i, 1]
                    fn += star_c[i, 2]
                elif pb >= tk:
                    tp += base_c[i, 0]
                    fp += base_c[i, 1]
                    fn += base_c[i, 2]
                elif ps >= tk:
                    tp += star_c[i, 0]
                    fp += star_c[i, 1]
                    fn += star_c[i, 2]
                else:
                    fn += null_fn[i]
            out[g, 0] = tp
            out[g, 1] = fp
            out[g, 2] = fn
        return out

    _numba_kernels = {"logreg_fit": logreg_fit_numba, "grid_counts": grid_counts_numba}
    return _numba_kernels


def __getattr__(name: str):
    # expose the jitted kernels lazily (used by the benchmark script)
    if name in ("_logreg_fit_numba", "_grid_counts_numba"):
        kernels = _build_numba_kernels()
        if kernels is None:
            raise AttributeError(f"numba path disabled; {name} unavailable")
        return kernels["logreg_fit" if "logreg" in name else "grid_counts"]
    raise AttributeError(name)


def logreg_fit(X: np.ndarray, y: np.ndarray, epochs: int, lr: float, l2: float):
    """Full-batch gradient descent on BCE + L2. Returns (weights, bias, losses).

    losses[t] is the regularized loss at the start of epoch t, so a
    non-increasing sequence certifies the step size. Zero epochs returns the
    zero model (probability 0.5 everywhere).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    kernels = _build_numba_kernels()
    if kernels is not None:
        return kernels["logreg_fit"](X, y, epochs, lr, l2)
    return _logreg_fit_numpy(X, y, epochs, lr, l2)


def grid_counts(
    p_base: np.ndarray,
    p_star: np.ndarray,
    base_c: np.ndarray,
    star_c: np.ndarray,
    null_fn: np.ndarray,
    tau_keep: np.ndarray,
    tau_take: np.ndarray,
    delta_margin: np.ndarray,
) -> np.ndarray:
    """Pooled (tp, fp, fn) per grid configuration for the keep/override/abstain rule.

    Inputs are per dev field: base/best-alternative confidences, the
    (tp, fp, fn) contribution of choosing the base value, of choosing the
    alternative's value, and the fn cost of abstaining. Counts are integers,
    so the numba and numpy paths agree exactly.
    """
    p_base = np.ascontiguousarray(p_base, dtype=np.float64)
    p_star = np.ascontiguousarray(p_star, dtype=np.float64)
    base_c = np.ascontiguousarray(base_c, dtype=np.int64)
    star_c = np.ascontiguousarray(star_c, dtype=np.int64)
    null_fn = np.ascontiguousarray(null_fn, dtype=np.int64)
    tau_keep = np.ascontiguousarray(tau_keep, dtype=np.float64)
    tau_take = np.ascontiguousarray(tau_take, dtype=np.float64)
    delta_margin = np.ascontiguousarray(delta_margin, dtype=np.float64)
    kernels = _build_numba_kernels()
    if kernels is not None:
        return kernels["grid_counts"](p_base, p_star, base_c, star_c, null_fn, tau_keep, tau_take, delta_margin)
    return _grid_counts_numpy(p_base, p_star, base_c, star_c, null_fn, tau_keep, tau_take, delta_margin)
