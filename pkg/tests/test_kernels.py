import os
import subprocess
import sys

import numpy as np
import pytest

from mtpoison import _kernels


def _problem(seed, n=60, d=3):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.where(X @ rng.normal(size=d) + 0.3 * rng.normal(size=n) > 0, 1.0, -1.0)
    C = rng.uniform(0.5, 2.0, n) / n
    return X, y, C


@pytest.mark.parametrize("use_bias", [True, False])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_dual_backends_agree(seed, use_bias):
    X, y, C = _problem(seed)
    out = []
    for flag in (True, False):
        alpha = np.zeros(len(y))
        with _kernels.use_numba(flag):
            status, _, viol = _kernels.solve_hinge_dual(X, y, C, 0.05, alpha, 1e-10, 200_000, use_bias)
        assert status == _kernels.CONVERGED and viol <= 1e-10
        out.append(alpha)
    w = [(a * y) @ X / 0.05 for a in out]
    np.testing.assert_allclose(w[0], w[1], atol=1e-6)


@pytest.mark.parametrize("kind", [_kernels.HINGE, _kernels.LOGISTIC])
def test_adam_backends_agree(kind):
    rng = np.random.default_rng(3)
    wt, wp = rng.normal(size=2), rng.normal(size=2)
    starts = rng.uniform(-1, 1, size=(4, 2))
    lo, hi = -np.ones(2), np.ones(2)
    res = []
    for flag in (True, False):
        with _kernels.use_numba(flag):
            res.append(_kernels.adam_ascent(kind, wt, 0.1, wp, -0.2, 1.0, starts, lo, hi, 300, 0.01))
    np.testing.assert_allclose(res[0][0], res[1][0], atol=1e-8)
    np.testing.assert_allclose(res[0][1], res[1][1], atol=1e-9)
    assert np.all(res[0][0] >= lo) and np.all(res[0][0] <= hi)


def test_use_numba_restores_flag():
    before = _kernels.numba_enabled()
    with _kernels.use_numba(False) as on:
        assert not on and not _kernels.numba_enabled()
    assert _kernels.numba_enabled() == before


@pytest.mark.parametrize("value,expected", [("0", False), ("off", False), ("1", True)])
def test_env_flag(value, expected):
    env = dict(os.environ, MTPOISON_NUMBA=value)
    code = "from mtpoison import _kernels; print(_kernels.numba_enabled())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == str(expected and _kernels.HAVE_NUMBA)
