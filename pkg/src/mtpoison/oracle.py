"""Maximising the loss difference l(theta_t; x, y) - l(theta_p; x, y) over the feature domain."""
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import FeatureDomain, L1Ball
from .lp import box_linear_max, l1_linear_max
from .model import LossKind, point_loss

__all__ = ["OracleResult", "max_loss_diff_hinge_exact", "max_loss_diff_approx", "loss_distance",
           "box_linear_max", "LABEL_ORDER"]

LABEL_ORDER = (1.0, -1.0)
_TIE = 1e-12


@dataclass(frozen=True)
class OracleResult:
    x_star: np.ndarray
    y_star: float
    value: float
    exact: bool


def _check(theta_t, theta_p, dim):
    if theta_t.dim != dim or theta_p.dim != dim:
        raise ValueError(f"dimension mismatch: models have {theta_t.dim}/{theta_p.dim} weights, domain has {dim}")


def _regions(theta_t, theta_p, y):
    """(c, c0, constraints) per activation region, in tie-break order.

    With m = y * score, region constraints are written as a.x <= b.
    Closed regions on both sides of each hinge kink.
    """
    wt, bt = theta_t.weights, theta_t.bias
    wp, bp = theta_p.weights, theta_p.bias
    t_on = (y * wt, 1.0 - y * bt)       # m_t <= 1
    t_off = (-y * wt, y * bt - 1.0)     # m_t >= 1
    p_on = (y * wp, 1.0 - y * bp)
    p_off = (-y * wp, y * bp - 1.0)
    zero = np.zeros_like(wt)
    return [
        (y * (wp - wt), y * (bp - bt), (t_on, p_on)),   # (1 - m_t) - (1 - m_p)
        (-y * wt, 1.0 - y * bt, (t_on, p_off)),         # 1 - m_t
        (zero, 0.0, (t_off, p_off)),                    # both losses zero
        (y * wp, y * bp - 1.0, (t_off, p_on)),          # -(1 - m_p)
    ]


def max_loss_diff_hinge_exact(theta_t, theta_p, domain):
    """Global maximiser of the hinge-loss difference over domain x {+1, -1}.

    ``domain`` is a FeatureDomain (box) or an L1Ball.  Every activation region of the
    two hinges is a polytope where the difference is linear, so each is one small LP.
    """
    _check(theta_t, theta_p, domain.dim)
    best = None
    for y in LABEL_ORDER:
        for c, c0, cons in _regions(theta_t, theta_p, y):
            if isinstance(domain, L1Ball):
                x, _, ok = l1_linear_max(c, c0, domain.radius, cons)
            else:
                x, _, ok = box_linear_max(c, c0, domain.lo, domain.hi, cons)
            if not ok:
                continue
            v = point_loss(LossKind.HINGE, theta_t, x, y) - point_loss(LossKind.HINGE, theta_p, x, y)
            if best is None or v > best[2] + _TIE:
                best = (x, y, v)
    if best is None:  # regions cover the domain, so only reachable through round-off
        raise RuntimeError("no feasible activation region found")
    x, y, v = best
    return OracleResult(np.asarray(x, dtype=np.float64), y, float(v), True)


def max_loss_diff_approx(loss, theta_t, theta_p, domain, restarts=10, steps=1000, seed=0, lr=0.01,
                         beta1=0.9, beta2=0.999):
    """Projected Adam ascent from uniform random starts, both labels; keeps the best point seen."""
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    if not isinstance(domain, FeatureDomain):
        raise TypeError("the approximate oracle needs a box domain")
    _check(theta_t, theta_p, domain.dim)
    kind = _kernels.HINGE if LossKind.parse(loss) is LossKind.HINGE else _kernels.LOGISTIC
    rng = np.random.default_rng(seed)
    best = None
    for y in LABEL_ORDER:
        starts = domain.sample(rng, restarts)
        xs, vs = _kernels.adam_ascent(kind, theta_t.weights, theta_t.bias, theta_p.weights, theta_p.bias,
                                      y, starts, domain.lo, domain.hi, int(steps), float(lr), beta1, beta2)
        k = int(np.argmax(vs))
        x = xs[k]
        v = point_loss(loss, theta_t, x, y) - point_loss(loss, theta_p, x, y)
        if best is None or v > best[2] + _TIE:
            best = (x.copy(), y, v)
    x, y, v = best
    return OracleResult(x, y, float(v), False)


def loss_distance(theta_1, theta_2, loss, domain, mode="exact", restarts=10, steps=1000, seed=0):
    """D(theta_1, theta_2) = max over domain and labels of l(theta_1) - l(theta_2).

    Returns (value, exact).  Not symmetric.
    """
    loss = LossKind.parse(loss)
    if mode == "exact":
        if loss is not LossKind.HINGE:
            raise ValueError("exact loss distance is only available for hinge loss")
        res = max_loss_diff_hinge_exact(theta_1, theta_2, domain)
    elif mode == "approx":
        res = max_loss_diff_approx(loss, theta_1, theta_2, domain, restarts, steps, seed)
    else:
        raise ValueError(f"unknown oracle mode {mode!r}")
    return res.value, res.exact
