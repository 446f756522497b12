"""Command line entry point: ``mtpoison <command> --config exp.yaml``.

Failures print one line ``error: <code>: <message>`` to stderr and exit nonzero.
"""
import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import attack as atk
from . import certify as cert
from .config import ConfigError, load_config
from .data import DataError, FeatureDomain, kmeans, load_dataset, make_subpop_blobs, make_two_gaussians, \
    select_subpopulations
from .model import ConvergenceError, LossKind, TrainConfig, empirical_loss, evaluate, fit, load_model, save_model
from .oracle import max_loss_diff_approx, max_loss_diff_hinge_exact
from .target import OverallError, SubpopError, TargetSpec, gen_target

OUT_ENV = "MTPOISON_OUT"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4
EXIT_CERTIFY = 5
EXIT_CAP = 6

_GOAL_REASONS = {"budget", "epsilon_close", "accuracy_goal"}


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


class Pipeline:
    """Lazily builds the shared pieces of every command from one config."""

    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        m = cfg.model
        self.loss = LossKind.parse(m.loss)
        self.train_config = TrainConfig(c_r=m.c_r, tolerance=m.tolerance, max_iters=m.max_iters, seed=cfg.seed)
        self.use_bias = m.use_bias
        self._data = None
        self._clean = None
        self._subpop = None

    # data ------------------------------------------------------------------
    def data(self):
        if self._data is None:
            self._data = self._load()
        return self._data

    def _load(self):
        ds = self.cfg.dataset
        if ds.synthetic is not None:
            s = ds.synthetic
            if s.kind == "two_gaussians":
                train = make_two_gaussians(s.n, s.seed)
                return train, None
            return make_subpop_blobs(s.n, s.seed)
        dom = None
        if ds.domain is not None:
            lo, hi = ds.domain.lo, ds.domain.hi
            if isinstance(lo, list) or isinstance(hi, list):
                dim = len(lo) if isinstance(lo, list) else len(hi)
                dom = FeatureDomain(np.broadcast_to(lo, dim), np.broadcast_to(hi, dim))
            else:
                dom = (lo, hi)
        kw = dict(label_map=ds.label_map, label_column=ds.label_column, dim=ds.dim, normalize=ds.normalize)
        train = load_dataset(ds.path, ds.format, dom, labels_path=ds.labels_path, **kw)
        if train.n == 0:
            raise DataError("empty dataset")
        test = None
        if ds.test_path is not None:
            test = load_dataset(ds.test_path, ds.format, train.domain, labels_path=ds.test_labels_path,
                                scale=train.scale, **kw)
        return train, test

    def eval_data(self):
        train, test = self.data()
        return train if test is None else test

    def fit(self, X, y, weights=None):
        return fit(self.loss, X, y, self.train_config, use_bias=self.use_bias, weights=weights).model

    def clean(self):
        if self._clean is None:
            train, _ = self.data()
            self._clean = self.fit(train.X, train.y)
        return self._clean

    # subpopulations ----------------------------------------------------------
    def clustering(self):
        sc = self.cfg.scenario
        if sc is None or sc.subpop is None:
            raise ConfigError("this command needs scenario.subpop")
        train, test = self.data()
        sp = sc.subpop
        if sp.k > train.n:
            raise DataError(f"k={sp.k} exceeds the {train.n} training rows")
        assign, centers = kmeans(train.X, sp.k, self.cfg.seed)
        spec = select_subpopulations(assign, train, sp.label_filter, self.clean(), sp.top_m,
                                     centers=centers, eval_data=test)
        return spec

    def subpop(self):
        """(subpopulation on the training split, the same on the evaluation split) or (None, None)."""
        if self._subpop is None:
            sc = self.cfg.scenario
            if sc is None or sc.subpop is None:
                self._subpop = (None, None)
            else:
                spec = self.clustering()
                rank = sc.subpop.cluster_rank
                if rank >= len(spec.selected):
                    raise ConfigError(f"cluster_rank {rank} but only {len(spec.selected)} clusters selected")
                one = spec.only(spec.selected[rank])
                _, test = self.data()
                self._subpop = (one, one if test is None else one.on(test))
        return self._subpop

    # target --------------------------------------------------------------
    def target(self):
        """(theta_p, metadata)."""
        tc = self.cfg.target
        if tc.path is not None:
            model, info = load_model(tc.path)
            return model, {"source": "file", **(info.get("metadata") or {})}
        if tc.clean:
            return self.clean(), {"source": "clean"}
        sc = self.cfg.scenario
        if sc is None:
            raise ConfigError("target generation needs a scenario (or target.path / target.clean)")
        if sc.subpop is not None:
            obj = SubpopError(1.0 if tc.required_error is None else tc.required_error)
        else:
            obj = OverallError(sc.indiscriminate.error if tc.required_error is None else tc.required_error)
        kw = {}
        if tc.quantiles is not None:
            kw["quantile_grid"] = tuple(tc.quantiles)
        if tc.copies is not None:
            kw["copy_grid"] = tuple(tc.copies)
        spec = TargetSpec(obj, adaptive=tc.adaptive, seed=self.cfg.seed, **kw)
        train, _ = self.data()
        sub_tr, sub_ev = self.subpop()
        res = gen_target(train, self.clean(), self.loss, self.train_config, spec, subpop=sub_tr,
                         eval_data=self.eval_data(), eval_subpop=sub_ev, use_bias=self.use_bias)
        return res.model, {"source": "generated", **res.metadata(obj)}

    def metrics(self, model):
        _, sub_ev = self.subpop()
        return evaluate(model, self.eval_data(), sub_ev)

    def oracle(self):
        o = self.cfg.attack.oracle if self.cfg.attack is not None else None
        if o is None:
            mode = "exact" if self.loss is LossKind.HINGE else "approx"
            return atk.OracleConfig(mode, seed=self.cfg.seed)
        return atk.OracleConfig(o.mode, o.restarts, o.steps, self.cfg.seed, o.lr)

    def save(self, name, model, metadata=None):
        save_model(self.out / name, model, self.loss, self.train_config.c_r, metadata)


def _stop(cfg):
    if cfg.attack is None:
        raise ConfigError("this command needs an attack block")
    s = cfg.attack.stop
    if s.budget is not None:
        return atk.Budget(s.budget)
    if s.epsilon is not None:
        return atk.EpsilonClose(s.epsilon)
    return atk.AccuracyGoal(s.accuracy.scope, s.accuracy.threshold)


def _certificate(p, iterates, ids, theta_p):
    train, _ = p.data()
    c = p.cfg.certify
    variant = None
    r_star = c.r_star if c.r_star is not None else cert.default_r_star(p.train_config.c_r)
    if c.eps is not None:
        if c.r is None or c.q is None:
            raise ConfigError("certify.eps needs certify.r and certify.q")
        variant = cert.EpsilonRelaxed(c.eps, cert.bidirectional_constant(c.r, c.q), r_star)
    consts = cert.theory_constants(theta_p, p.train_config.c_r, train.domain, iterates, c.r, c.q)
    consts.reg_upper_r_star = r_star
    return cert.best_lower_bound(iterates, theta_p, train, p.train_config.c_r, train.domain, p.loss,
                                 variant, ids, consts)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_cluster(p, args):
    spec = p.clustering()
    train, _ = p.data()
    sp = p.cfg.scenario.subpop
    report = {
        "k": sp.k, "seed": p.cfg.seed, "label_filter": sp.label_filter,
        "assignments": spec.assignments, "centers": spec.centers,
        "selected": spec.selected, "accuracies": spec.accuracies,
        "member_counts": {c: len(spec.member_indices[c]) for c in spec.selected},
        "cluster_sizes": np.bincount(spec.assignments, minlength=sp.k),
    }
    _dump(p.out / "cluster_report.json", report)
    return EXIT_OK


def cmd_train(p, args):
    clean = p.clean()
    p.save("clean_model.json", clean, {"metrics": p.metrics(clean)})
    return EXIT_OK


def cmd_gen_target(p, args):
    theta_p, meta = p.target()
    meta["metrics"] = p.metrics(theta_p)
    p.save("target_model.json", theta_p, meta)
    return EXIT_OK


def cmd_attack(p, args):
    train, _ = p.data()
    clean = p.clean()
    theta_p, meta = p.target()
    _, sub_ev = p.subpop()
    stop = _stop(p.cfg)
    poison, trace = atk.run_attack(train, theta_p, p.loss, p.train_config, train.domain, stop,
                                   p.cfg.attack.copies_per_iter, p.oracle(), eval_data=p.eval_data(),
                                   subpop=sub_ev, use_bias=p.use_bias,
                                   max_iterations=p.cfg.attack.max_iterations)
    p.save("clean_model.json", clean, {"metrics": p.metrics(clean)})
    p.save("target_model.json", theta_p, {**meta, "metrics": p.metrics(theta_p)})
    atk.write_trace(trace, p.out / "trace.csv")
    atk.write_poison(poison, p.out / "poison.libsvm")
    atk.write_iterates(trace, p.out / "iterates.json", p.loss, p.train_config.c_r)
    summary = atk.summarize(trace)
    summary["certificate"] = None
    if p.loss is LossKind.HINGE and p.oracle().mode == "exact":
        try:
            c = _certificate(p, trace.iterates, trace.iterate_ids(), theta_p)
            cert.write_certificate(c, p.out / "certificate.json")
            summary["certificate"] = c.to_dict()
        except cert.CertificationError as exc:
            summary["certificate"] = {"error": str(exc)}
    _dump(p.out / "summary.json", summary)
    return EXIT_OK if trace.stop_reason in _GOAL_REASONS else EXIT_CAP


def _baseline_budget(p):
    """(budget, prior attack summary or None); the config budget wins over the prior n_p."""
    path = p.out / "summary.json"
    prior = None
    if path.exists():
        with open(path) as fh:
            prior = json.load(fh)
    if p.cfg.baseline.budget is not None:
        return p.cfg.baseline.budget, prior
    if prior is None:
        raise ConfigError("baseline.budget is unset and no attack summary.json in the output directory")
    return int(prior["n_p"]), prior


def cmd_baseline(p, args):
    train, _ = p.data()
    sub_tr, sub_ev = p.subpop()
    if sub_tr is None:
        raise ConfigError("the label-flip baseline needs scenario.subpop")
    budget, prior = _baseline_budget(p)
    theta_p, _ = p.target()
    flips = atk.label_flip_attack(train, sub_tr, budget, p.cfg.seed)
    oracle = p.oracle()
    checkpoints = sorted({int(round(budget * k / 10)) for k in range(1, 11)} - {0}) if budget else []
    trace = atk.AttackTrace(stop_reason="budget")
    prev = 0
    model = p.clean()
    for k, b in enumerate(checkpoints):
        Xp = np.array([f.x for f in flips[:b]])
        yp = np.array([f.y for f in flips[:b]])
        model = p.fit(np.vstack([train.X, Xp]), np.concatenate([train.y, yp]))
        if oracle.mode == "exact":
            o = max_loss_diff_hinge_exact(model, theta_p, train.domain)
            lb = cert.lower_bound_z(model, theta_p, train, p.train_config.c_r, train.domain, sup=o.value)
        else:
            o = max_loss_diff_approx(p.loss, model, theta_p, train.domain, oracle.restarts, oracle.steps,
                                     [oracle.seed, k], oracle.lr)
            lb = None
        m = p.metrics(model)
        pt = atk.PoisonPoint(None, flips[b - 1].y, b - prev, k)
        trace.records.append(atk.IterationRecord(
            k, pt, o.value, o.exact, model.distance(theta_p), lb, m["overall_accuracy"],
            m["subpop_accuracy"], empirical_loss(p.loss, model, train), flips[b - 1].y))
        prev = b
    atk.write_trace(trace, p.out / "baseline_trace.csv")
    atk.write_poison(flips, p.out / "baseline_poison.libsvm")
    m = p.metrics(model)
    final = {"overall_acc": m["overall_accuracy"], "subpop_acc": m["subpop_accuracy"]}
    summary = {"n_p": budget, "final": final, "attack": None}
    if prior is not None:
        fin = prior.get("final") or {}
        summary["attack"] = {"n_p": prior.get("n_p"), "overall_acc": fin.get("overall_acc"),
                             "subpop_acc": fin.get("subpop_acc")}
    _dump(p.out / "baseline_summary.json", summary)
    return EXIT_OK


def cmd_certify(p, args):
    iter_path = Path(args.iterates) if args.iterates else p.out / "iterates.json"
    model_path = Path(args.model) if args.model else p.out / "target_model.json"
    for f in (iter_path, model_path):
        if not f.exists():
            raise DataError(f"{f}: no such file")
    ids, iterates = atk.read_iterates(iter_path)
    theta_p, _ = load_model(model_path)
    c = _certificate(p, iterates, ids, theta_p)
    cert.write_certificate(c, p.out / "certificate.json")
    return EXIT_OK


def cmd_evaluate(p, args):
    if not args.model:
        raise ConfigError("evaluate needs --model")
    model, _ = load_model(args.model)
    train, test = p.data()
    sub_tr, sub_ev = p.subpop()
    out = {"train": evaluate(model, train, sub_tr)}
    if test is not None:
        out["test"] = evaluate(model, test, sub_ev)
    _dump(p.out / "evaluation.json", out)
    return EXIT_OK


COMMANDS = {
    "cluster": cmd_cluster,
    "train": cmd_train,
    "gen-target": cmd_gen_target,
    "attack": cmd_attack,
    "baseline": cmd_baseline,
    "certify": cmd_certify,
    "evaluate": cmd_evaluate,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser():
    ap = _Parser(prog="mtpoison", description="Model-targeted poisoning of linear classifiers.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.error = ap.error
        sp.add_argument("--config", required=True, help="experiment YAML")
        sp.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        if name in ("certify", "evaluate"):
            sp.add_argument("--model", help="model JSON")
        if name == "certify":
            sp.add_argument("--iterates", help="iterates JSON written by attack")
    return ap


def _error(code, msg):
    msg = " ".join(str(msg).split())
    print(f"error: {code}: {msg}", file=sys.stderr)


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except _UsageError as exc:
        _error("usage", exc)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        out = args.out or os.environ.get(OUT_ENV) or cfg.output.dir
        return COMMANDS[args.command](Pipeline(cfg, out), args)
    except ConfigError as exc:
        _error("config", exc)
        return EXIT_CONFIG
    except DataError as exc:
        _error("data", exc)
        return EXIT_DATA
    except ConvergenceError as exc:
        _error("convergence", exc)
        return EXIT_CONVERGENCE
    except cert.CertificationError as exc:
        _error("certify", exc)
        return EXIT_CERTIFY
    except (ValueError, OSError) as exc:
        _error("invalid", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last line of defence keeps the one-line contract
        _error("internal", f"{type(exc).__name__}: {exc}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
