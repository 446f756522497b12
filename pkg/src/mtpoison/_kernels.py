"""Hot inner loops, each with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and ``MTPOISON_NUMBA`` is
not set to ``0``. Both paths run the same algorithm; the numpy path vectorises
the per-step work instead of looping over scalars.
"""
import os
from contextlib import contextmanager

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

_ENV_FLAG = "MTPOISON_NUMBA"
_use_numba = HAVE_NUMBA and os.environ.get(_ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")

HINGE = 0
LOGISTIC = 1

# dual solver exit codes
CONVERGED = 0
MAX_ITER = 1


def numba_enabled():
    return _use_numba


@contextmanager
def use_numba(flag):
    """Temporarily force the kernel backend (tests and benchmarks)."""
    global _use_numba
    old = _use_numba
    _use_numba = bool(flag) and HAVE_NUMBA
    try:
        yield _use_numba
    finally:
        _use_numba = old


def _maybe_jit(fn):
    if HAVE_NUMBA:
        return njit(cache=True, nogil=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# Hinge dual, with unregularised bias: SMO with second-order working set
# selection. Solves
#     min_a 0.5 a'Qa - sum(a)   s.t.  0 <= a_i <= C_i,  sum(y_i a_i) = 0
# with Q_ij = y_i y_j <x_i, x_j> / lam, so that w = sum(a_i y_i x_i) / lam.
# ---------------------------------------------------------------------------

def _smo_bias_loop(X, y, C, lam, alpha, tol, max_iter):
    n, d = X.shape
    w = np.zeros(d)
    for t in range(n):
        if alpha[t] != 0.0:
            for k in range(d):
                w[k] += alpha[t] * y[t] * X[t, k]
    for k in range(d):
        w[k] /= lam
    sqn = np.empty(n)
    G = np.empty(n)
    for t in range(n):
        s = 0.0
        q = 0.0
        for k in range(d):
            s += X[t, k] * w[k]
            q += X[t, k] * X[t, k]
        G[t] = y[t] * s - 1.0
        sqn[t] = q
    it = 0
    status = MAX_ITER
    gap = np.inf
    while it < max_iter:
        gmax = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C[t]:
                    v = -G[t]
                    if v > gmax:
                        gmax = v
                        i = t
            else:
                if alpha[t] > 0.0:
                    v = G[t]
                    if v > gmax:
                        gmax = v
                        i = t
        gmin = np.inf
        j = -1
        best = np.inf
        for t in range(n):
            in_low = (y[t] > 0 and alpha[t] > 0.0) or (y[t] < 0 and alpha[t] < C[t])
            if not in_low:
                continue
            v = -y[t] * G[t]
            if v < gmin:
                gmin = v
            if i >= 0:
                b = gmax - v
                if b > 0.0:
                    dot = 0.0
                    for k in range(d):
                        dot += X[i, k] * X[t, k]
                    a = (sqn[i] + sqn[t] - 2.0 * dot) / lam
                    if a <= 0.0:
                        a = 1e-12
                    score = -(b * b) / a
                    if score < best:
                        best = score
                        j = t
        gap = gmax - gmin
        if i < 0 or j < 0 or gap <= tol:
            status = CONVERGED
            break
        it += 1
        dot = 0.0
        for k in range(d):
            dot += X[i, k] * X[j, k]
        quad = (sqn[i] + sqn[j] - 2.0 * dot) / lam
        if quad <= 0.0:
            quad = 1e-12
        ai_old = alpha[i]
        aj_old = alpha[j]
        Ci = C[i]
        Cj = C[j]
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0.0:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > Ci - Cj:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = Ci - diff
            else:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = Cj + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > Ci:
                if alpha[i] > Ci:
                    alpha[i] = Ci
                    alpha[j] = total - Ci
            else:
                if alpha[j] < 0.0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > Cj:
                if alpha[j] > Cj:
                    alpha[j] = Cj
                    alpha[i] = total - Cj
            else:
                if alpha[i] < 0.0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = (alpha[i] - ai_old) * y[i] / lam
        dj = (alpha[j] - aj_old) * y[j] / lam
        u = di * X[i] + dj * X[j]
        for k in range(d):
            w[k] += u[k]
        for t in range(n):
            s = 0.0
            for k in range(d):
                s += X[t, k] * u[k]
            G[t] += y[t] * s
    return status, it, gap


def _smo_bias_numpy(X, y, C, lam, alpha, tol, max_iter):
    w = (alpha * y) @ X / lam
    G = y * (X @ w) - 1.0
    sqn = np.einsum("ij,ij->i", X, X)
    pos = y > 0
    it = 0
    status = MAX_ITER
    gap = np.inf
    while it < max_iter:
        up = np.where(pos, alpha < C, alpha > 0.0)
        low = np.where(pos, alpha > 0.0, alpha < C)
        if not up.any() or not low.any():
            status = CONVERGED
            gap = 0.0
            break
        score_up = np.where(up, -y * G, -np.inf)
        i = int(np.argmax(score_up))
        gmax = score_up[i]
        v = np.where(low, -y * G, np.inf)
        gmin = v.min()
        gap = gmax - gmin
        if gap <= tol:
            status = CONVERGED
            break
        b = gmax - v
        cand = low & (b > 0.0)
        a = (sqn[i] + sqn - 2.0 * (X @ X[i])) / lam
        a = np.where(a <= 0.0, 1e-12, a)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        it += 1
        quad = a[j]
        ai_old, aj_old = alpha[i], alpha[j]
        Ci, Cj = C[i], C[j]
        ai, aj = ai_old, aj_old
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0.0:
                if aj < 0.0:
                    aj, ai = 0.0, diff
            elif ai < 0.0:
                ai, aj = 0.0, -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai, aj = Ci, Ci - diff
            elif aj > Cj:
                aj, ai = Cj, Cj + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ai -= delta
            aj += delta
            if total > Ci:
                if ai > Ci:
                    ai, aj = Ci, total - Ci
            elif aj < 0.0:
                aj, ai = 0.0, total
            if total > Cj:
                if aj > Cj:
                    aj, ai = Cj, total - Cj
            elif ai < 0.0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        u = ((ai - ai_old) * y[i] * X[i] + (aj - aj_old) * y[j] * X[j]) / lam
        w += u
        G += y * (X @ u)
    return status, it, gap


# ---------------------------------------------------------------------------
# Hinge dual without bias: greedy dual coordinate descent (no equality row).
# ---------------------------------------------------------------------------

def _dcd_nobias_loop(X, y, C, lam, alpha, tol, max_iter):
    n, d = X.shape
    w = np.zeros(d)
    for t in range(n):
        if alpha[t] != 0.0:
            for k in range(d):
                w[k] += alpha[t] * y[t] * X[t, k]
    for k in range(d):
        w[k] /= lam
    sqn = np.empty(n)
    G = np.empty(n)
    for t in range(n):
        s = 0.0
        q = 0.0
        for k in range(d):
            s += X[t, k] * w[k]
            q += X[t, k] * X[t, k]
        G[t] = y[t] * s - 1.0
        sqn[t] = q
    it = 0
    status = MAX_ITER
    viol = np.inf
    while it < max_iter:
        viol = 0.0
        i = -1
        for t in range(n):
            g = G[t]
            if alpha[t] <= 0.0:
                pg = g if g < 0.0 else 0.0
            elif alpha[t] >= C[t]:
                pg = g if g > 0.0 else 0.0
            else:
                pg = g
            if abs(pg) > viol:
                viol = abs(pg)
                i = t
        if i < 0 or viol <= tol:
            status = CONVERGED
            break
        it += 1
        qii = sqn[i] / lam
        old = alpha[i]
        if qii > 0.0:
            new = old - G[i] / qii
        else:
            new = C[i] if G[i] < 0.0 else 0.0
        if new < 0.0:
            new = 0.0
        elif new > C[i]:
            new = C[i]
        alpha[i] = new
        di = (new - old) * y[i] / lam
        if di != 0.0:
            for k in range(d):
                w[k] += di * X[i, k]
            for t in range(n):
                s = 0.0
                for k in range(d):
                    s += X[t, k] * X[i, k]
                G[t] += y[t] * di * s
    return status, it, viol


def _dcd_nobias_numpy(X, y, C, lam, alpha, tol, max_iter):
    w = (alpha * y) @ X / lam
    G = y * (X @ w) - 1.0
    sqn = np.einsum("ij,ij->i", X, X)
    it = 0
    status = MAX_ITER
    viol = np.inf
    while it < max_iter:
        pg = np.where(alpha <= 0.0, np.minimum(G, 0.0), np.where(alpha >= C, np.maximum(G, 0.0), G))
        i = int(np.argmax(np.abs(pg)))
        viol = abs(pg[i])
        if viol <= tol:
            status = CONVERGED
            break
        it += 1
        qii = sqn[i] / lam
        old = alpha[i]
        if qii > 0.0:
            new = old - G[i] / qii
        else:
            new = C[i] if G[i] < 0.0 else 0.0
        new = min(max(new, 0.0), C[i])
        alpha[i] = new
        di = (new - old) * y[i] / lam
        if di != 0.0:
            w += di * X[i]
            G += y * di * (X @ X[i])
    return status, it, viol


# ---------------------------------------------------------------------------
# Projected Adam ascent on l(theta_t; x, y) - l(theta_p; x, y) over a box.
# ---------------------------------------------------------------------------

def _point_loss_scalar(kind, s, y):
    m = y * s
    if kind == HINGE:
        return 1.0 - m if m < 1.0 else 0.0
    if m > 0.0:
        return np.log1p(np.exp(-m))
    return -m + np.log1p(np.exp(m))


def _adam_ascent_loop(kind, wt, bt, wp, bp, y, starts, lo, hi, steps, lr, beta1, beta2, eps_adam):
    R, d = starts.shape
    best_x = starts.copy()
    best_v = np.full(R, -np.inf)
    x = np.empty(d)
    m1 = np.empty(d)
    m2 = np.empty(d)
    g = np.empty(d)
    for r in range(R):
        for k in range(d):
            x[k] = starts[r, k]
            m1[k] = 0.0
            m2[k] = 0.0
        b1t = 1.0
        b2t = 1.0
        for step in range(steps + 1):
            st = bt
            sp = bp
            for k in range(d):
                st += wt[k] * x[k]
                sp += wp[k] * x[k]
            v = _point_loss_scalar(kind, st, y) - _point_loss_scalar(kind, sp, y)
            if v > best_v[r]:
                best_v[r] = v
                for k in range(d):
                    best_x[r, k] = x[k]
            if step == steps:
                break
            # d/dx of loss: -y * w * c, c = [margin < 1] (hinge) or sigmoid(-margin)
            mt = y * st
            mp = y * sp
            if kind == HINGE:
                ct = 1.0 if mt < 1.0 else 0.0
                cp = 1.0 if mp < 1.0 else 0.0
            else:
                ct = 1.0 / (1.0 + np.exp(mt)) if mt > -30.0 else 1.0
                cp = 1.0 / (1.0 + np.exp(mp)) if mp > -30.0 else 1.0
            b1t *= beta1
            b2t *= beta2
            for k in range(d):
                g[k] = -y * (wt[k] * ct - wp[k] * cp)
                m1[k] = beta1 * m1[k] + (1.0 - beta1) * g[k]
                m2[k] = beta2 * m2[k] + (1.0 - beta2) * g[k] * g[k]
                mh = m1[k] / (1.0 - b1t)
                vh = m2[k] / (1.0 - b2t)
                xk = x[k] + lr * mh / (np.sqrt(vh) + eps_adam)
                if xk < lo[k]:
                    xk = lo[k]
                elif xk > hi[k]:
                    xk = hi[k]
                x[k] = xk
    return best_x, best_v


def _loss_vec(kind, s, y):
    m = y * s
    if kind == HINGE:
        return np.maximum(1.0 - m, 0.0)
    return np.logaddexp(0.0, -m)


def _adam_ascent_numpy(kind, wt, bt, wp, bp, y, starts, lo, hi, steps, lr, beta1, beta2, eps_adam):
    x = starts.copy()
    R = x.shape[0]
    m1 = np.zeros_like(x)
    m2 = np.zeros_like(x)
    best_x = x.copy()
    best_v = np.full(R, -np.inf)
    b1t = 1.0
    b2t = 1.0
    for step in range(steps + 1):
        st = x @ wt + bt
        sp = x @ wp + bp
        v = _loss_vec(kind, st, y) - _loss_vec(kind, sp, y)
        better = v > best_v
        best_v = np.where(better, v, best_v)
        best_x[better] = x[better]
        if step == steps:
            break
        mt = y * st
        mp = y * sp
        if kind == HINGE:
            ct = (mt < 1.0).astype(float)
            cp = (mp < 1.0).astype(float)
        else:
            ct = 0.5 * (1.0 - np.tanh(0.5 * mt))
            cp = 0.5 * (1.0 - np.tanh(0.5 * mp))
        g = -y * (ct[:, None] * wt[None, :] - cp[:, None] * wp[None, :])
        b1t *= beta1
        b2t *= beta2
        m1 = beta1 * m1 + (1.0 - beta1) * g
        m2 = beta2 * m2 + (1.0 - beta2) * g * g
        x = x + lr * (m1 / (1.0 - b1t)) / (np.sqrt(m2 / (1.0 - b2t)) + eps_adam)
        np.clip(x, lo, hi, out=x)
    return best_x, best_v


_smo_bias_nb = _maybe_jit(_smo_bias_loop)
_dcd_nobias_nb = _maybe_jit(_dcd_nobias_loop)
_point_loss_scalar = _maybe_jit(_point_loss_scalar)
_adam_ascent_nb = _maybe_jit(_adam_ascent_loop)


def solve_hinge_dual(X, y, C, lam, alpha, tol, max_iter, use_bias):
    """Run the dual solver in place on ``alpha``; returns (status, iterations, violation)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    C = np.ascontiguousarray(C, dtype=np.float64)
    if use_bias:
        fn = _smo_bias_nb if _use_numba else _smo_bias_numpy
    else:
        fn = _dcd_nobias_nb if _use_numba else _dcd_nobias_numpy
    status, it, viol = fn(X, y, C, float(lam), alpha, float(tol), int(max_iter))
    return int(status), int(it), float(viol)


def adam_ascent(kind, wt, bt, wp, bp, y, starts, lo, hi, steps, lr, beta1=0.9, beta2=0.999, eps_adam=1e-8):
    """Projected Adam ascent from each start; returns best point and value per start."""
    args = (
        int(kind),
        np.ascontiguousarray(wt, dtype=np.float64),
        float(bt),
        np.ascontiguousarray(wp, dtype=np.float64),
        float(bp),
        float(y),
        np.ascontiguousarray(starts, dtype=np.float64),
        np.ascontiguousarray(lo, dtype=np.float64),
        np.ascontiguousarray(hi, dtype=np.float64),
        int(steps),
        float(lr),
        float(beta1),
        float(beta2),
        float(eps_adam),
    )
    fn = _adam_ascent_nb if _use_numba else _adam_ascent_numpy
    return fn(*args)
