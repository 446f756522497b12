"""The online model-targeted poisoning loop, the label-flip baseline, and trace I/O."""
import csv
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .certify import lower_bound_z
from .data import Dataset, write_libsvm
from .model import LinearModel, LossKind, empirical_loss, evaluate, fit, model_to_dict
from .oracle import max_loss_diff_approx, max_loss_diff_hinge_exact

TRACE_SCHEMA = "mtpoison-trace/1"
TRACE_COLUMNS = ["iter", "y_star", "copies", "max_loss_diff", "oracle_exact", "euclid_dist", "lower_bound",
                 "lower_bound_valid", "overall_acc", "subpop_acc", "clean_loss"]


# ---------------------------------------------------------------------------
# stop criteria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Budget:
    T: int

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("budget T must be positive")


@dataclass(frozen=True)
class EpsilonClose:
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass(frozen=True)
class AccuracyGoal:
    """Halt once accuracy on ``scope`` ("overall" or "subpop") drops to ``threshold`` or below."""
    scope: str
    threshold: float

    def __post_init__(self):
        if self.scope not in ("overall", "subpop"):
            raise ValueError("scope must be 'overall' or 'subpop'")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


StopCriterion = (Budget, EpsilonClose, AccuracyGoal)


@dataclass(frozen=True)
class OracleConfig:
    mode: str = "exact"
    restarts: int = 10
    steps: int = 1000
    seed: int = 0
    lr: float = 0.01

    def __post_init__(self):
        if self.mode not in ("exact", "approx"):
            raise ValueError(f"unknown oracle mode {self.mode!r}")


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class PoisonPoint:
    x: np.ndarray
    y: float
    copies: int
    iteration: int


@dataclass
class IterationRecord:
    """Diagnostics of theta_t together with the point added after it."""
    iteration: int
    point: Optional[PoisonPoint]
    max_loss_diff: float
    oracle_exact: bool
    euclid_dist: float
    lower_bound: Optional[float]
    overall_acc: float
    subpop_acc: Optional[float]
    clean_empirical_loss: float
    y_star: float = 0.0

    @property
    def lower_bound_valid(self):
        return self.lower_bound is not None

    @property
    def copies(self):
        return 0 if self.point is None else self.point.copies


@dataclass
class AttackTrace:
    records: list = field(default_factory=list)
    final: Optional[IterationRecord] = None
    stop_reason: Optional[str] = None
    iterates: list = field(default_factory=list)

    @property
    def poison_total(self):
        return sum(r.copies for r in self.records)

    @property
    def best_index(self):
        """Index of the record with the smallest max loss difference (first on ties); -1 if none."""
        if not self.records:
            return -1
        return int(np.argmin([r.max_loss_diff for r in self.records]))

    @property
    def best_model(self):
        """Lowest-distance iterate among all evaluated ones, halting state included."""
        states = self.records + ([self.final] if self.final is not None else [])
        if not self.iterates or not states:
            return None
        k = int(np.argmin([s.max_loss_diff for s in states]))
        return self.iterates[k]

    def iterate_ids(self):
        states = self.records + ([self.final] if self.final is not None else [])
        return [s.iteration for s in states]

    def running_min(self):
        v = np.array([r.max_loss_diff for r in self.records])
        return np.minimum.accumulate(v) if v.size else v


# ---------------------------------------------------------------------------
# the attack
# ---------------------------------------------------------------------------

class _Pool:
    """Clean rows plus weighted poison rows, grown in place."""

    def __init__(self, data, capacity):
        n, d = data.X.shape
        cap = n + max(capacity, 16)
        self.X = np.empty((cap, d))
        self.y = np.empty(cap)
        self.w = np.empty(cap)
        self.X[:n], self.y[:n], self.w[:n] = data.X, data.y, 1.0
        self.size = n

    def add(self, x, y, copies):
        if self.size == self.y.size:
            grow = self.y.size
            self.X = np.vstack([self.X, np.empty((grow, self.X.shape[1]))])
            self.y = np.concatenate([self.y, np.empty(grow)])
            self.w = np.concatenate([self.w, np.empty(grow)])
        self.X[self.size], self.y[self.size], self.w[self.size] = x, y, copies
        self.size += 1

    def view(self):
        k = self.size
        return self.X[:k], self.y[:k], self.w[:k]


def _query(loss, theta_t, theta_p, domain, oracle, t):
    if oracle.mode == "exact":
        if loss is not LossKind.HINGE:
            raise ValueError("the exact oracle is only available for hinge loss")
        return max_loss_diff_hinge_exact(theta_t, theta_p, domain)
    return max_loss_diff_approx(loss, theta_t, theta_p, domain, oracle.restarts, oracle.steps,
                                [oracle.seed, t], oracle.lr)


def run_attack(data, theta_p, loss, train_config, domain, stop, copies_per_iter=1, oracle=None,
               eval_data=None, subpop=None, use_bias=True, max_iterations=100_000, callback=None):
    """Add max-loss-difference points until ``stop`` fires on the current model.

    ``subpop`` must be resolved on ``eval_data`` (which defaults to ``data``).
    Returns (poison points, trace).
    """
    loss = LossKind.parse(loss)
    oracle = OracleConfig() if oracle is None else oracle
    if copies_per_iter < 1:
        raise ValueError("copies_per_iter must be at least 1")
    if theta_p.dim != data.dim:
        raise ValueError("target model dimension does not match the data")
    if not isinstance(stop, StopCriterion):
        raise TypeError("stop must be Budget, EpsilonClose or AccuracyGoal")
    if isinstance(stop, EpsilonClose) and oracle.mode != "exact":
        warnings.warn("closeness is measured with the approximate oracle", stacklevel=2)
    if isinstance(stop, AccuracyGoal) and stop.scope == "subpop" and subpop is None:
        raise ValueError("a subpopulation accuracy goal needs a subpopulation")
    eval_data = data if eval_data is None else eval_data
    cap = stop.T if isinstance(stop, Budget) else max_iterations

    pool = _Pool(data, cap if isinstance(stop, Budget) else 1024)
    clean_loss_p = empirical_loss(loss, theta_p, data)
    trace = AttackTrace()
    poison = []
    warm = None
    t = 0
    while True:
        X, y, w = pool.view()
        res = fit(loss, X, y, train_config, use_bias=use_bias, weights=w, warm=warm)
        warm = res.dual
        theta_t = res.model.with_id(f"t{t}")
        o = _query(loss, theta_t, theta_p, domain, oracle, t)
        lb = None
        if o.exact:
            lb = lower_bound_z(theta_t, theta_p, data, train_config.c_r, domain, sup=o.value,
                               clean_loss_p=clean_loss_p)
        metrics = evaluate(theta_t, eval_data, subpop)
        rec = IterationRecord(t, None, o.value, o.exact, theta_t.distance(theta_p), lb,
                              metrics["overall_accuracy"], metrics["subpop_accuracy"],
                              empirical_loss(loss, theta_t, data), o.y_star)
        trace.iterates.append(theta_t)

        reason = None
        if isinstance(stop, Budget) and t >= stop.T:
            reason = "budget"
        elif isinstance(stop, EpsilonClose) and o.value <= stop.eps:
            reason = "epsilon_close"
        elif isinstance(stop, AccuracyGoal):
            acc = rec.overall_acc if stop.scope == "overall" else rec.subpop_acc
            if acc <= stop.threshold:
                reason = "accuracy_goal"
        if reason is None and t >= cap:
            reason = "iteration_cap"
        if reason is not None:
            trace.final = rec
            trace.stop_reason = reason
            break

        pt = PoisonPoint(o.x_star.copy(), o.y_star, int(copies_per_iter), t)
        rec.point = pt
        trace.records.append(rec)
        poison.append(pt)
        pool.add(pt.x, pt.y, pt.copies)
        if callback is not None:
            callback(rec)
        t += 1
    return poison, trace


def poison_dataset(poison, domain):
    """Expand poison points into a Dataset with every copy materialised."""
    if not poison:
        return Dataset(np.zeros((0, domain.dim)), np.zeros(0), domain)
    X = np.vstack([np.repeat(p.x[None, :], p.copies, axis=0) for p in poison])
    y = np.concatenate([np.full(p.copies, p.y) for p in poison])
    return Dataset(X, y, domain)


def label_flip_attack(data, subpop, budget, seed):
    """Subpopulation rows sampled without replacement, labels negated."""
    idx = subpop.indices()
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if budget > idx.size:
        raise ValueError(f"budget {budget} exceeds subpopulation size {idx.size}")
    rng = np.random.default_rng(seed)
    pick = np.sort(rng.choice(idx, size=budget, replace=False)) if budget else idx[:0]
    return [PoisonPoint(data.X[i].copy(), -float(data.y[i]), 1, k) for k, i in enumerate(pick)]


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _opt_float(s):
    return None if s == "" else float(s)


def write_trace(trace, path):
    """CSV of the point-adding iterations; a leading comment line carries the schema version."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# {TRACE_SCHEMA}\n")
        wr = csv.writer(fh)
        wr.writerow(TRACE_COLUMNS)
        for r in trace.records:
            wr.writerow([_fmt(r.iteration), _fmt(r.y_star), _fmt(r.copies), _fmt(r.max_loss_diff),
                         _fmt(r.oracle_exact), _fmt(r.euclid_dist), _fmt(r.lower_bound),
                         _fmt(r.lower_bound_valid), _fmt(r.overall_acc), _fmt(r.subpop_acc),
                         _fmt(r.clean_empirical_loss)])


def read_trace(path):
    """Inverse of write_trace.  Poison features live in the companion file, so points carry none."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {TRACE_SCHEMA}":
            raise ValueError(f"{path}: unsupported trace schema {first!r}")
        rd = csv.reader(fh)
        header = next(rd, None)
        if header != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace columns {header}")
        trace = AttackTrace()
        for row in rd:
            if not row:
                continue
            v = dict(zip(TRACE_COLUMNS, row))
            it = int(v["iter"])
            copies = int(v["copies"])
            y = float(v["y_star"])
            pt = PoisonPoint(None, y, copies, it) if copies else None
            trace.records.append(IterationRecord(
                it, pt, float(v["max_loss_diff"]), v["oracle_exact"] == "1", float(v["euclid_dist"]),
                _opt_float(v["lower_bound"]), float(v["overall_acc"]), _opt_float(v["subpop_acc"]),
                float(v["clean_loss"]), y))
    return trace


def write_poison(poison, path):
    """Companion libsvm file; each line is tagged with its iteration and copy count."""
    X = np.array([p.x for p in poison]).reshape(len(poison), -1) if poison else np.zeros((0, 0))
    y = np.array([p.y for p in poison])
    write_libsvm(path, X, y, keys=[f"iter={p.iteration} copies={p.copies}" for p in poison])


def write_iterates(trace, path, loss, c_r):
    out = {"iterations": trace.iterate_ids(),
           "models": [model_to_dict(m, loss, c_r) for m in trace.iterates]}
    with open(path, "w") as fh:
        json.dump(out, fh)
        fh.write("\n")


def read_iterates(path):
    with open(path) as fh:
        raw = json.load(fh)
    return raw["iterations"], [LinearModel(m["weights"], m["bias"]) for m in raw["models"]]


def summarize(trace):
    fin = trace.final
    best = trace.best_index
    return {
        "n_p": trace.poison_total,
        "iterations": len(trace.records),
        "best_index": best,
        "best_max_loss_diff": None if best < 0 else trace.records[best].max_loss_diff,
        "final": None if fin is None else {
            "iteration": fin.iteration,
            "max_loss_diff": fin.max_loss_diff,
            "euclid_dist": fin.euclid_dist,
            "overall_acc": fin.overall_acc,
            "subpop_acc": fin.subpop_acc,
            "clean_loss": fin.clean_empirical_loss,
        },
        "stop_reason": trace.stop_reason,
    }

