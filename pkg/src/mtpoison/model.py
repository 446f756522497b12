"""Linear classifiers, losses and deterministic regularised ERM."""
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import _kernels


class LossKind(str, Enum):
    HINGE = "hinge"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, value):
        return value if isinstance(value, cls) else cls(str(value).lower())


class ConvergenceError(RuntimeError):
    def __init__(self, msg, model=None, gap=None):
        super().__init__(msg)
        self.model = model
        self.gap = gap


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray
    bias: float = 0.0
    id: Optional[str] = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(w)) and np.isfinite(self.bias)):
            raise ValueError("model parameters must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", float(self.bias))

    @property
    def dim(self):
        return self.weights.size

    def scores(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights + self.bias

    def predict(self, X):
        # score exactly 0 predicts +1
        return np.where(self.scores(X) >= 0.0, 1.0, -1.0)

    def params(self):
        return np.append(self.weights, self.bias)

    def distance(self, other):
        """Euclidean distance over weights and bias."""
        return float(np.linalg.norm(self.params() - other.params()))

    def same_as(self, other):
        return np.array_equal(self.weights, other.weights) and self.bias == other.bias

    def with_id(self, id):
        return LinearModel(self.weights, self.bias, id)


@dataclass(frozen=True)
class TrainConfig:
    c_r: float = 0.01
    tolerance: float = 1e-8
    max_iters: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if self.c_r < 0:
            raise ValueError("c_r must be nonnegative")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


def _check_dim(model, X):
    if X.shape[-1] != model.dim:
        raise ValueError(f"dimension mismatch: model has {model.dim} weights, data has {X.shape[-1]} features")


def losses(loss, model, X, y):
    """Per-row losses, vectorised."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    _check_dim(model, X)
    m = np.asarray(y, dtype=np.float64) * model.scores(X)
    if LossKind.parse(loss) is LossKind.HINGE:
        return np.maximum(1.0 - m, 0.0)
    return np.logaddexp(0.0, -m)


def point_loss(loss, model, x, y):
    return float(losses(loss, model, np.asarray(x, dtype=np.float64)[None, :], [y])[0])


def empirical_loss(loss, model, data, weights=None):
    """Sum of per-point losses (duplicates or ``weights`` counted with multiplicity)."""
    if data.n == 0:
        return 0.0
    ell = losses(loss, model, data.X, data.y)
    return float(ell.sum() if weights is None else ell @ np.asarray(weights, dtype=np.float64))


def regularizer(model):
    return 0.5 * float(model.weights @ model.weights)


def objective(loss, model, X, y, c_r, weights=None):
    """Averaged ERM objective: (1/|D|) sum_i w_i l_i + c_r R."""
    ell = losses(loss, model, X, y)
    if weights is None:
        avg = ell.mean() if ell.size else 0.0
    else:
        weights = np.asarray(weights, dtype=np.float64)
        avg = ell @ weights / weights.sum()
    return float(avg) + c_r * regularizer(model)


def logistic_gradient(model, X, y, c_r, weights=None, use_bias=True):
    """Exact gradient of the averaged logistic objective; returns (g_w, g_b)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones(y.size) if weights is None else np.asarray(weights, dtype=np.float64)
    m = y * model.scores(X)
    coef = -w * y * 0.5 * (1.0 - np.tanh(0.5 * m)) / w.sum()
    gw = coef @ X + c_r * model.weights
    gb = float(coef.sum()) if use_bias else 0.0
    return gw, gb


@dataclass
class FitResult:
    model: LinearModel
    optimality: float
    iterations: int
    dual: Optional[np.ndarray] = field(default=None, repr=False)
    duality_gap: Optional[float] = None


def _hinge_bias_from_kkt(alpha, C, G, y):
    """Bias from the dual: exact on free vectors, else midpoint of the feasible interval."""
    v = -y * G
    free = (alpha > 0.0) & (alpha < C)
    if free.any():
        return float(v[free].mean())
    pos = y > 0
    at_zero = alpha <= 0.0
    lower = (pos & at_zero) | (~pos & ~at_zero)
    upper = (pos & ~at_zero) | (~pos & at_zero)
    lb = v[lower].max() if lower.any() else -np.inf
    ub = v[upper].min() if upper.any() else np.inf
    if np.isfinite(lb) and np.isfinite(ub):
        return 0.5 * (lb + ub)
    if np.isfinite(lb):
        return float(lb)
    if np.isfinite(ub):
        return float(ub)
    return 0.0


def _fit_hinge(X, y, sw, config, use_bias, warm):
    if config.c_r <= 0:
        raise ValueError("hinge training needs c_r > 0 (strongly convex regulariser)")
    keep = sw > 0
    Xk, yk, Ck = X[keep], y[keep], sw[keep]
    lam = config.c_r * Ck.sum()
    alpha = np.zeros(Ck.size)
    if warm is not None and warm.size == sw.size:
        alpha = np.minimum(np.maximum(warm[keep], 0.0), Ck)
        if use_bias and abs(alpha @ yk) > 1e-12 * Ck.sum():
            alpha = np.zeros(Ck.size)
    status, it, viol = _kernels.solve_hinge_dual(Xk, yk, Ck, lam, alpha, config.tolerance,
                                                 config.max_iters, use_bias)
    w = (alpha * yk) @ Xk / lam
    G = yk * (Xk @ w) - 1.0
    b = _hinge_bias_from_kkt(alpha, Ck, G, yk) if use_bias else 0.0
    model = LinearModel(w, b)
    W = Ck.sum()
    primal = (Ck @ np.maximum(1.0 - yk * (Xk @ w + b), 0.0)) / W + config.c_r * regularizer(model)
    dual_obj = (alpha.sum() - 0.5 * lam * float(w @ w)) / W
    full_alpha = np.zeros(sw.size)
    full_alpha[keep] = alpha
    res = FitResult(model, viol, it, full_alpha, float(primal - dual_obj))
    if status != _kernels.CONVERGED:
        raise ConvergenceError(
            f"hinge training stopped after {it} iterations with KKT violation {viol:.3g} > {config.tolerance:g}",
            model, viol)
    return res


def _fit_logistic(X, y, sw, config, use_bias, warm):
    n, d = X.shape
    W = sw.sum()
    p = d + 1 if use_bias else d
    theta = np.zeros(p) if warm is None else np.array(warm, dtype=np.float64)
    Z = np.hstack([X, np.ones((n, 1))]) if use_bias else X
    reg = np.full(p, config.c_r)
    if use_bias:
        reg[-1] = 0.0

    def fgh(th, need_hess):
        m = y * (Z @ th)
        f = (sw @ np.logaddexp(0.0, -m)) / W + 0.5 * config.c_r * float(th[:d] @ th[:d])
        s = 0.5 * (1.0 - np.tanh(0.5 * m))  # sigmoid(-m)
        g = Z.T @ (-sw * y * s) / W + reg * th
        if not need_hess:
            return f, g, None
        h = sw * s * (1.0 - s) / W
        H = (Z * h[:, None]).T @ Z + np.diag(reg)
        return f, g, H

    f, g, H = fgh(theta, True)
    gnorm = float(np.linalg.norm(g))
    it = 0
    while gnorm > config.tolerance:
        if it >= config.max_iters:
            model = LinearModel(theta[:d], theta[d] if use_bias else 0.0)
            raise ConvergenceError(
                f"logistic training stopped after {it} Newton steps with gradient norm {gnorm:.3g}", model, gnorm)
        it += 1
        try:
            step = -np.linalg.solve(H + 1e-12 * np.eye(p), g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, g, rcond=None)[0]
        if not np.all(np.isfinite(step)) or g @ step >= 0:
            step = -g
        t = 1.0
        slope = float(g @ step)
        while True:
            f_new, _, _ = fgh(theta + t * step, False)
            if f_new <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        theta = theta + t * step
        f, g, H = fgh(theta, True)
        gnorm = float(np.linalg.norm(g))
    model = LinearModel(theta[:d], theta[d] if use_bias else 0.0)
    return FitResult(model, gnorm, it, theta.copy(), None)


def fit(loss, X, y, config, use_bias=True, weights=None, warm=None):
    """Train and keep solver state; ``warm`` is the ``dual`` of a previous FitResult.

    Hinge warm starts take dual variables aligned with the rows of ``X`` (extra rows
    start at zero); logistic warm starts take the previous parameter vector.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y.size == 0:
        raise ValueError("cannot train on an empty dataset")
    sw = np.ones(y.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if LossKind.parse(loss) is LossKind.HINGE:
        if warm is not None and warm.size < sw.size:
            warm = np.concatenate([warm, np.zeros(sw.size - warm.size)])
        return _fit_hinge(X, y, sw, config, use_bias, warm)
    return _fit_logistic(X, y, sw, config, use_bias, warm)


def train(loss, data, config, use_bias=True, weights=None):
    """Minimise (1/|data|) L(theta; data) + c_r R(theta)."""
    return fit(loss, data.X, data.y, config, use_bias, weights).model


def evaluate(model, data, subpop=None):
    _check_dim(model, data.X)
    pred = model.predict(data.X)
    out = {"overall_accuracy": float(np.mean(pred == data.y)), "subpop_accuracy": None}
    if subpop is not None:
        idx = subpop.indices()
        if idx.size == 0:
            raise ValueError("empty subpopulation")
        out["subpop_accuracy"] = float(np.mean(pred[idx] == data.y[idx]))
    return out


def model_to_dict(model, loss, c_r, metadata=None):
    out = {"weights": [float(v) for v in model.weights], "bias": float(model.bias),
           "loss": LossKind.parse(loss).value, "c_r": float(c_r)}
    if metadata is not None:
        out["metadata"] = metadata
    return out


def save_model(path, model, loss, c_r, metadata=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, loss, c_r, metadata), fh, indent=1)
        fh.write("\n")


def load_model(path):
    """Returns (model, info) where info holds loss, c_r and any metadata."""
    with open(path) as fh:
        raw = json.load(fh)
    for key in ("weights", "bias", "loss", "c_r"):
        if key not in raw:
            raise ValueError(f"{path}: model file missing {key!r}")
    info = {"loss": LossKind.parse(raw["loss"]), "c_r": float(raw["c_r"]), "metadata": raw.get("metadata")}
    return LinearModel(raw["weights"], raw["bias"]), info
