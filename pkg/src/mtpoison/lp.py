"""Small linear programs over boxes: the region solvers behind the exact hinge oracle."""
import numpy as np

_FEAS_TOL = 1e-10


class LPInfeasible(Exception):
    pass


def bounded_simplex(c, A, b, lo, hi, max_iter=10_000):
    """max c.x  s.t.  A x = b,  lo <= x <= hi   (lo finite, hi may be +inf).

    Revised bounded-variable primal simplex with a phase-1 on artificials.
    Meant for a handful of rows; B^-1 is recomputed at every pivot.
    Dantzig pricing, Bland's rule after a run of degenerate pivots.
    """
    c = np.asarray(c, dtype=np.float64)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    b = np.asarray(b, dtype=np.float64).ravel()
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    m, n = A.shape
    if np.any(~np.isfinite(lo)):
        raise ValueError("lower bounds must be finite")
    if np.any(lo > hi + _FEAS_TOL):
        raise LPInfeasible("empty box")
    x = lo.copy()
    r = b - A @ x
    sgn = np.where(r >= 0.0, 1.0, -1.0)
    # columns: originals, then one artificial per row
    Afull = np.hstack([A, np.diag(sgn)])
    lo_f = np.concatenate([lo, np.zeros(m)])
    hi_f = np.concatenate([hi, np.full(m, np.inf)])
    x_f = np.concatenate([x, np.abs(r)])
    basis = list(range(n, n + m))
    scale = 1.0 + np.abs(b).max(initial=0.0) + np.abs(A).sum(axis=1).max(initial=0.0) * np.abs(np.concatenate([lo, hi[np.isfinite(hi)]])).max(initial=0.0)
    tol = 1e-11 * scale

    def run(cost):
        degenerate = 0
        for _ in range(max_iter):
            Binv = np.linalg.inv(Afull[:, basis])
            nb = np.ones(n + m, dtype=bool)
            nb[basis] = False
            xN = np.where(nb, x_f, 0.0)
            x_f[basis] = Binv @ (b - Afull @ xN)
            pi = cost[basis] @ Binv
            red = cost - pi @ Afull
            at_lo = nb & (x_f <= lo_f + tol)
            at_hi = nb & (x_f >= hi_f - tol)
            movable = hi_f - lo_f > tol  # fixed variables never enter
            can_up = at_lo & movable & (red > 1e-10)
            can_dn = at_hi & movable & (red < -1e-10)
            eligible = np.flatnonzero(can_up | can_dn)
            if eligible.size == 0:
                return
            if degenerate > 50:
                j = int(eligible[0])
            else:
                j = int(eligible[np.argmax(np.abs(red[eligible]))])
            direction = 1.0 if can_up[j] else -1.0
            col = Binv @ Afull[:, j]
            step = hi_f[j] - lo_f[j]
            leave = -1
            leave_to_hi = False
            for pos, bj in enumerate(basis):
                rate = -direction * col[pos]  # d x_B / d t
                if rate < -1e-12:
                    lim = (x_f[bj] - lo_f[bj]) / -rate
                    to_hi = False
                elif rate > 1e-12 and np.isfinite(hi_f[bj]):
                    lim = (hi_f[bj] - x_f[bj]) / rate
                    to_hi = True
                else:
                    continue
                lim = max(lim, 0.0)
                if lim < step - 1e-15 or (leave >= 0 and abs(lim - step) <= 1e-15 and bj < basis[leave]):
                    step, leave, leave_to_hi = lim, pos, to_hi
            if not np.isfinite(step):
                raise ValueError("unbounded linear program")
            degenerate = degenerate + 1 if step <= tol else 0
            x_f[j] += direction * step
            if leave < 0:
                continue  # bound flip
            out = basis[leave]
            x_f[out] = hi_f[out] if leave_to_hi else lo_f[out]
            basis[leave] = j
        raise RuntimeError("simplex iteration limit reached")

    phase1 = np.concatenate([np.zeros(n), -np.ones(m)])
    run(phase1)
    if x_f[n:].sum() > 1e-9 * scale:
        raise LPInfeasible("constraints are infeasible over the box")
    # pin artificials at zero for phase 2
    hi_f[n:] = 0.0
    x_f[n:] = np.minimum(x_f[n:], 0.0)
    phase2 = np.concatenate([c, np.zeros(m)])
    run(phase2)
    xs = np.clip(x_f[:n], lo, hi)
    return xs, float(c @ xs)


def _sign_rule(c, lo, hi):
    return np.where(c > 0.0, hi, lo)


def _max_one_equality(c, a, beta, lo, hi):
    """max c.x s.t. a.x = beta over the box, by greedy exchange on c_k/a_k."""
    x = np.where(a > 0.0, lo, np.where(a < 0.0, hi, _sign_rule(c, lo, hi)))
    need = beta - a @ x
    cap = np.abs(a) * (hi - lo)
    scale = 1.0 + abs(beta) + np.abs(a) @ np.maximum(np.abs(lo), np.abs(hi))
    if need < -_FEAS_TOL * scale or need > cap.sum() + _FEAS_TOL * scale:
        return None
    active = np.flatnonzero(a != 0.0)
    rate = c[active] / a[active]
    order = active[np.lexsort((active, -rate))]
    for k in order:
        if need <= 0.0:
            break
        take = min(cap[k], need)
        x[k] += take / a[k]
        need -= take
    return np.clip(x, lo, hi)


def _feasible(x, A, b):
    if A.shape[0] == 0:
        return True
    scale = 1.0 + np.abs(b) + np.abs(A) @ np.abs(x)
    return bool(np.all(A @ x <= b + _FEAS_TOL * scale))


def box_linear_max(c, c0, lo, hi, constraints=()):
    """Global max of c.x + c0 over the box intersected with at most two halfspaces.

    ``constraints`` is a sequence of (a, b) pairs meaning a.x <= b.
    Returns (x, value, feasible); x and value are None when infeasible.
    """
    c = np.asarray(c, dtype=np.float64)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if len(constraints) > 2:
        raise ValueError("at most two halfspace constraints")
    rows, rhs = [], []
    for a, bnd in constraints:
        a = np.asarray(a, dtype=np.float64)
        if not np.any(a):
            if bnd < -_FEAS_TOL:
                return None, None, False
            continue
        rows.append(a)
        rhs.append(float(bnd))
    A = np.array(rows).reshape(len(rows), c.size)
    b = np.array(rhs)
    # a constraint no box point can violate is dropped
    if A.shape[0]:
        worst = np.where(A > 0, hi, lo)
        slack_ok = np.einsum("ij,ij->i", A, worst) <= b
        best = np.einsum("ij,ij->i", A, np.where(A > 0, lo, hi))
        if np.any(best > b + _FEAS_TOL * (1.0 + np.abs(b))):
            return None, None, False
        A, b = A[~slack_ok], b[~slack_ok]

    x0 = _sign_rule(c, lo, hi)
    if _feasible(x0, A, b):
        return x0, float(c @ x0 + c0), True
    cands = []
    for i in range(A.shape[0]):
        xi = _max_one_equality(c, A[i], b[i], lo, hi)
        if xi is not None and _feasible(xi, A, b):
            cands.append(xi)
    if A.shape[0] == 2:
        try:
            x2, _ = bounded_simplex(c, A, b, lo, hi)
            if _feasible(x2, A, b):
                cands.append(x2)
        except LPInfeasible:
            pass
    if not cands:
        return None, None, False
    vals = [float(c @ x) for x in cands]
    k = int(np.argmax(vals))
    return cands[k], vals[k] + c0, True


def l1_linear_max(c, c0, radius, constraints=()):
    """max c.x + c0 over {||x||_1 <= radius} intersected with halfspaces a.x <= b.

    Split x = u - v with u, v in [0, radius]; every inequality gets a slack.
    """
    c = np.asarray(c, dtype=np.float64)
    d = c.size
    rows = [np.concatenate([np.ones(d), np.ones(d)])]
    rhs = [float(radius)]
    for a, bnd in constraints:
        a = np.asarray(a, dtype=np.float64)
        rows.append(np.concatenate([a, -a]))
        rhs.append(float(bnd))
    m = len(rows)
    A = np.hstack([np.array(rows), np.eye(m)])
    cost = np.concatenate([c, -c, np.zeros(m)])
    lo = np.zeros(2 * d + m)
    hi = np.concatenate([np.full(2 * d, float(radius)), np.full(m, np.inf)])
    try:
        z, _ = bounded_simplex(cost, A, np.array(rhs), lo, hi)
    except LPInfeasible:
        return None, None, False
    x = z[:d] - z[d:2 * d]
    return x, float(c @ x + c0), True
