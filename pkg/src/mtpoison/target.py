"""Target classifiers: flip the highest-loss points, repeat them, retrain."""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import LossKind, empirical_loss, evaluate, fit, losses

DEFAULT_QUANTILES = tuple(round(0.05 * i, 2) for i in range(1, 11))
DEFAULT_COPIES = (1, 2, 3, 5, 8)


@dataclass(frozen=True)
class SubpopError:
    """Error required on the subpopulation; 1.0 means every member misclassified."""
    required_error: float = 1.0
    spec_id: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.required_error <= 1.0:
            raise ValueError("required_error must lie in [0, 1]")


@dataclass(frozen=True)
class OverallError:
    required_error: float

    def __post_init__(self):
        if not 0.0 <= self.required_error <= 1.0:
            raise ValueError("required_error must lie in [0, 1]")


@dataclass(frozen=True)
class TargetSpec:
    objective: object
    quantile_grid: tuple = DEFAULT_QUANTILES
    copy_grid: tuple = DEFAULT_COPIES
    adaptive: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.quantile_grid or not self.copy_grid:
            raise ValueError("target grids must be nonempty")
        if any(not 0.0 < q <= 1.0 for q in self.quantile_grid):
            raise ValueError("quantiles must lie in (0, 1]")
        if any(int(m) != m or m < 1 for m in self.copy_grid):
            raise ValueError("copy counts must be positive integers")


@dataclass
class TargetResult:
    model: object
    clean_loss: float
    achieved_error: float
    met: bool
    quantile: Optional[float] = None
    copies: Optional[int] = None
    n_flipped: int = 0
    candidates: list = field(default_factory=list, repr=False)

    def metadata(self, objective):
        kind = "subpop_error" if isinstance(objective, SubpopError) else "overall_error"
        return {"objective": {"kind": kind, "required_error": objective.required_error},
                "achieved_error": self.achieved_error, "clean_loss": self.clean_loss, "met": self.met,
                "quantile": self.quantile, "copies": self.copies, "n_flipped": self.n_flipped}


def _achieved_error(model, objective, eval_data, eval_subpop):
    m = evaluate(model, eval_data, eval_subpop if isinstance(objective, SubpopError) else None)
    acc = m["subpop_accuracy"] if isinstance(objective, SubpopError) else m["overall_accuracy"]
    return 1.0 - acc


def gen_target(data, clean_model, loss, train_config, spec, subpop=None, eval_data=None, eval_subpop=None,
               use_bias=True):
    """Grid search over (quantile, copies); returns a TargetResult.

    ``subpop`` picks the flip candidates on ``data``; ``eval_subpop`` (defaulting to
    ``subpop``) is the same subpopulation resolved on ``eval_data``, where the
    achieved error is measured.
    """
    loss = LossKind.parse(loss)
    obj = spec.objective
    eval_data = data if eval_data is None else eval_data
    if isinstance(obj, SubpopError):
        if subpop is None:
            raise ValueError("a subpopulation objective needs a subpopulation")
        eval_subpop = subpop if eval_subpop is None else eval_subpop
        pool_idx = subpop.indices()
    else:
        pool_idx = np.arange(data.n)
    if pool_idx.size == 0:
        raise ValueError("no candidate rows to flip")

    base_err = _achieved_error(clean_model, obj, eval_data, eval_subpop)
    if base_err >= obj.required_error:
        return TargetResult(clean_model, empirical_loss(loss, clean_model, data), base_err, True)

    ranker = clean_model
    cands = []
    for q in spec.quantile_grid:
        for m in spec.copy_grid:
            ell = losses(loss, ranker, data.X[pool_idx], data.y[pool_idx])
            order = np.lexsort((pool_idx, -ell))
            k = max(1, int(math.ceil(q * pool_idx.size - 1e-9)))
            flip = pool_idx[order[:k]]
            X = np.vstack([data.X, data.X[flip]])
            y = np.concatenate([data.y, -data.y[flip]])
            w = np.concatenate([np.ones(data.n), np.full(k, float(m))])
            model = fit(loss, X, y, train_config, use_bias=use_bias, weights=w).model
            err = _achieved_error(model, obj, eval_data, eval_subpop)
            cl = empirical_loss(loss, model, data)
            cands.append(TargetResult(model, cl, err, err >= obj.required_error, q, int(m), k))
            if spec.adaptive:
                ranker = model

    met = [c for c in cands if c.met]
    if met:
        best = min(met, key=lambda c: c.clean_loss)  # min keeps the first on ties
    else:
        best = min(cands, key=lambda c: (-c.achieved_error, c.clean_loss))
    best.candidates = cands
    return best


def target_from_attack(data, poison_set, loss, train_config, use_bias=True):
    """Model induced by training on the clean data plus an existing poison set."""
    full = data if poison_set.n == 0 else data.concat(poison_set)
    return fit(loss, full.X, full.y, train_config, use_bias=use_bias).model
