from __future__ import annotations

import os
import subprocess
import sys

import numpy as np

from fieldwise import _kernels


def random_grid_problem(seed=0, n=500):
    rng = np.random.default_rng(seed)
    p_base = rng.random(n)
    p_star = np.where(rng.random(n) < 0.1, -1.0, rng.random(n))  # some fields lack alternatives
    base_c = rng.integers(0, 2, size=(n, 3)).astype(np.int64)
    star_c = rng.integers(0, 2, size=(n, 3)).astype(np.int64)
    null_fn = rng.integers(0, 2, size=n).astype(np.int64)
    values = np.linspace(0.0, 1.0, 6)
    tks, tts, dms = [], [], []
    for tk in values:
        for tt in values:
            if tt < tk:
                continue
            for dm in values:
                tks.append(tk)
                tts.append(tt)
                dms.append(dm)
    return p_base, p_star, base_c, star_c, null_fn, np.array(tks), np.array(tts), np.array(dms)


def brute_force_counts(p_base, p_star, base_c, star_c, null_fn, tks, tts, dms):
    out = np.zeros((len(tks), 3), dtype=np.int64)
    for g in range(len(tks)):
        for i in range(len(p_base)):
            if p_star[i] >= tts[g] and (p_star[i] - p_base[i]) >= dms[g] and p_star[i] > p_base[i]:
                out[g] += star_c[i]
            elif p_base[i] >= tks[g]:
                out[g] += base_c[i]
            elif p_star[i] >= tks[g]:
                out[g] += star_c[i]
            else:
                out[g, 2] += null_fn[i]
    return out


def test_grid_counts_match_brute_force():
    args = random_grid_problem(seed=1, n=200)
    expected = brute_force_counts(*args)
    assert np.array_equal(_kernels.grid_counts(*args), expected)


def test_grid_counts_numba_and_numpy_agree_exactly():
    args = random_grid_problem(seed=2, n=400)
    numpy_counts = _kernels._grid_counts_numpy(*[np.ascontiguousarray(a, dtype=t) for a, t in zip(
        args, (np.float64, np.float64, np.int64, np.int64, np.int64, np.float64, np.float64, np.float64))])
    active = _kernels.grid_counts(*args)
    assert np.array_equal(active, numpy_counts)


def logreg_problem(seed=0, n=300, d=8):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    w_true = rng.normal(size=d)
    y = (1.0 / (1.0 + np.exp(-(X @ w_true))) > rng.random(n)).astype(np.float64)
    return X, y


def test_logreg_paths_agree():
    X, y = logreg_problem(seed=3)
    w_np, b_np, losses_np = _kernels._logreg_fit_numpy(X, y, 100, 0.3, 1e-4)
    w_active, b_active, losses_active = _kernels.logreg_fit(X, y, 100, 0.3, 1e-4)
    assert np.allclose(w_np, w_active, atol=1e-9)
    assert abs(b_np - b_active) < 1e-9
    assert np.allclose(losses_np, losses_active, atol=1e-9)


def test_logreg_zero_epochs_zero_model():
    X, y = logreg_problem(seed=4)
    w, b, losses = _kernels.logreg_fit(X, y, 0, 0.3, 1e-4)
    assert np.all(w == 0.0) and b == 0.0 and losses.size == 0


def test_logreg_loss_decreases():
    X, y = logreg_problem(seed=5)
    _, _, losses = _kernels.logreg_fit(X, y, 150, 0.3, 1e-4)
    assert losses[-1] < losses[0]
    assert np.all(np.diff(losses) <= 1e-12)


def test_env_flag_selects_numpy_path():
    env = dict(os.environ, FIELDWISE_NUMBA="0")
    out = subprocess.run(
        [sys.executable, "-c", "from fieldwise import _kernels; print(_kernels.USE_NUMBA)"],
        capture_output=True, text=True, env=env, check=True,
    )
    assert out.stdout.strip() == "False"


def test_numba_enabled_by_default_here():
    # the mirror ships numba; the default path should be jitted in this env
    assert _kernels.USE_NUMBA is True
