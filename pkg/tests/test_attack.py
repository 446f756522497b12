import warnings

import numpy as np
import pytest

from mtpoison.attack import (AccuracyGoal, AttackTrace, Budget, EpsilonClose, IterationRecord, OracleConfig,
                             PoisonPoint, label_flip_attack, poison_dataset, read_iterates, read_trace, run_attack,
                             summarize, write_iterates, write_poison, write_trace)
from mtpoison.data import SubpopulationSpec, load_dataset, make_subpop_blobs, make_two_gaussians
from mtpoison.model import LinearModel, TrainConfig, evaluate, fit, point_loss, train
from mtpoison.oracle import loss_distance
from mtpoison.target import OverallError, TargetSpec, gen_target

CFG = TrainConfig(c_r=0.05)


@pytest.fixture(scope="module")
def setup():
    d = make_two_gaussians(120, seed=2)
    clean = train("hinge", d, CFG, use_bias=False)
    tp = gen_target(d, clean, "hinge", CFG, TargetSpec(OverallError(0.25)), use_bias=False).model
    return d, clean, tp


@pytest.fixture(scope="module")
def budget_run(setup):
    d, _, tp = setup
    return run_attack(d, tp, "hinge", CFG, d.domain, Budget(40), use_bias=False)


def test_stop_criteria_validate():
    with pytest.raises(ValueError):
        Budget(0)
    with pytest.raises(ValueError):
        EpsilonClose(0.0)
    with pytest.raises(ValueError):
        AccuracyGoal("overall", 1.5)
    with pytest.raises(ValueError):
        AccuracyGoal("everything", 0.5)
    with pytest.raises(ValueError):
        OracleConfig("guess")


def test_clean_target_halts_immediately(setup):
    d, clean, _ = setup
    poison, trace = run_attack(d, clean, "hinge", CFG, d.domain, EpsilonClose(1e-6), use_bias=False)
    assert poison == [] and trace.records == [] and trace.poison_total == 0
    assert trace.stop_reason == "epsilon_close" and trace.final.iteration == 0
    assert trace.best_index == -1 and trace.best_model.distance(clean) < 1e-6


def test_budget_gives_exactly_T_records(setup):
    d, _, tp = setup
    for copies in (1, 3):
        poison, trace = run_attack(d, tp, "hinge", CFG, d.domain, Budget(7), copies_per_iter=copies, use_bias=False)
        assert len(trace.records) == 7 and len(poison) == 7
        assert trace.poison_total == 7 * copies and trace.stop_reason == "budget"
        assert [r.iteration for r in trace.records] == list(range(7))


def test_trace_invariants(setup, budget_run):
    d, _, tp = setup
    poison, trace = budget_run
    diffs = [r.max_loss_diff for r in trace.records]
    assert trace.records[trace.best_index].max_loss_diff == min(diffs)
    rm = trace.running_min()
    assert np.all(np.diff(rm) <= 0)
    for rec, model in zip(trace.records, trace.iterates):
        pt = rec.point
        assert d.domain.contains(pt.x) and pt.y in (1.0, -1.0)
        here = point_loss("hinge", model, pt.x, pt.y) - point_loss("hinge", tp, pt.x, pt.y)
        assert rec.oracle_exact and abs(rec.max_loss_diff - here) <= 1e-9
        assert rec.euclid_dist == pytest.approx(model.distance(tp))


def test_recorded_distance_is_the_loss_distance(setup, budget_run):
    d, _, tp = setup
    _, trace = budget_run
    for rec, model in list(zip(trace.records, trace.iterates))[::8]:
        assert rec.max_loss_diff == pytest.approx(loss_distance(model, tp, "hinge", d.domain)[0], abs=1e-12)


def test_iterates_are_the_retrained_models(setup, budget_run):
    d, _, tp = setup
    poison, trace = budget_run
    for t in (0, 5, 20, 40):
        P = poison_dataset(poison[:t], d.domain)
        full = d.concat(P)
        cold = fit("hinge", full.X, full.y, CFG, use_bias=False).model
        assert trace.iterates[t].distance(cold) < 1e-5


def test_lower_bound_snapshots(setup, budget_run):
    _, trace = budget_run
    assert all(r.lower_bound_valid for r in trace.records[1:])


def test_logistic_attack_has_no_valid_bounds():
    d = make_two_gaussians(60, seed=3)
    cfg = TrainConfig(c_r=0.05)
    clean = train("logistic", d, cfg)
    tp = LinearModel(clean.weights * np.array([1.0, -1.0]), 0.0)
    oracle = OracleConfig("approx", restarts=2, steps=100, seed=1)
    poison, trace = run_attack(d, tp, "logistic", cfg, d.domain, Budget(5), oracle=oracle)
    assert len(poison) == 5
    assert all(not r.oracle_exact and not r.lower_bound_valid for r in trace.records)
    with pytest.raises(ValueError):
        run_attack(d, tp, "logistic", cfg, d.domain, Budget(2))


def test_epsilon_with_approximate_oracle_warns(setup):
    d, clean, _ = setup
    with pytest.warns(UserWarning, match="approximate"):
        run_attack(d, clean, "hinge", CFG, d.domain, EpsilonClose(0.5), use_bias=False,
                   oracle=OracleConfig("approx", restarts=2, steps=50))


def test_epsilon_close_reaches_eps(setup):
    d, _, tp = setup
    poison, trace = run_attack(d, tp, "hinge", CFG, d.domain, EpsilonClose(0.05), use_bias=False)
    assert trace.stop_reason == "epsilon_close" and trace.final.max_loss_diff <= 0.05
    assert all(r.max_loss_diff > 0.05 for r in trace.records)
    assert trace.best_model is trace.iterates[-1]


def test_accuracy_goal_and_iteration_cap():
    tr, te = make_subpop_blobs(120, seed=4)
    clean = train("hinge", tr, CFG)
    idx = np.flatnonzero((te.X[:, 0] < 0) & (te.y == 1))
    sub = SubpopulationSpec(np.zeros(te.n, int), [0], 1, {0: idx})
    tp = LinearModel([1.0, 0.2], 0.0)
    _, trace = run_attack(tr, tp, "hinge", CFG, tr.domain, AccuracyGoal("subpop", 0.5), eval_data=te, subpop=sub)
    assert trace.stop_reason == "accuracy_goal" and trace.final.subpop_acc <= 0.5
    assert evaluate(clean, te, sub)["subpop_accuracy"] > 0.5
    _, trace = run_attack(tr, tp, "hinge", CFG, tr.domain, AccuracyGoal("overall", 0.0), max_iterations=3)
    assert trace.stop_reason == "iteration_cap" and len(trace.records) == 3
    with pytest.raises(ValueError):
        run_attack(tr, tp, "hinge", CFG, tr.domain, AccuracyGoal("subpop", 0.5))


def test_argument_checks(setup):
    d, _, tp = setup
    with pytest.raises(ValueError):
        run_attack(d, tp, "hinge", CFG, d.domain, Budget(1), copies_per_iter=0)
    with pytest.raises(ValueError):
        run_attack(d, LinearModel([1.0]), "hinge", CFG, d.domain, Budget(1))
    with pytest.raises(TypeError):
        run_attack(d, tp, "hinge", CFG, d.domain, 5)


# --- label flipping ---------------------------------------------------------

def _sub(d):
    idx = np.flatnonzero(d.y == 1)[:30]
    return SubpopulationSpec(np.zeros(d.n, int), [0], 1, {0: idx})


def test_label_flip(setup):
    d, _, _ = setup
    sp = _sub(d)
    assert label_flip_attack(d, sp, 0, seed=0) == []
    pts = label_flip_attack(d, sp, 12, seed=5)
    assert len(pts) == 12
    rows = [int(np.flatnonzero(np.all(d.X == p.x, axis=1))[0]) for p in pts]
    assert len(set(rows)) == 12 and set(rows) <= set(sp.indices())
    assert all(p.y == -d.y[r] for p, r in zip(pts, rows))
    again = label_flip_attack(d, sp, 12, seed=5)
    assert all(np.array_equal(a.x, b.x) for a, b in zip(pts, again))
    with pytest.raises(ValueError):
        label_flip_attack(d, sp, 31, seed=0)


# --- files ------------------------------------------------------------------

def test_trace_roundtrip(tmp_path, budget_run):
    _, trace = budget_run
    trace.records[3].subpop_acc = 1 / 3
    write_trace(trace, tmp_path / "t.csv")
    back = read_trace(tmp_path / "t.csv")
    assert len(back.records) == len(trace.records)
    for a, b in zip(trace.records, back.records):
        for f in ("iteration", "y_star", "copies", "max_loss_diff", "oracle_exact", "euclid_dist", "lower_bound",
                  "lower_bound_valid", "overall_acc", "subpop_acc", "clean_empirical_loss"):
            assert getattr(a, f) == getattr(b, f), f
    assert back.records[0].subpop_acc is None
    trace.records[3].subpop_acc = None


def test_empty_trace_is_header_only(tmp_path):
    write_trace(AttackTrace(), tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("iter,y_star,copies,max_loss_diff")
    assert read_trace(tmp_path / "e.csv").records == []


def test_trace_schema_mismatch(tmp_path):
    (tmp_path / "x.csv").write_text("# other/9\niter\n")
    with pytest.raises(ValueError, match="schema"):
        read_trace(tmp_path / "x.csv")


def test_missing_lower_bound_roundtrips(tmp_path):
    tr = AttackTrace(records=[IterationRecord(0, PoisonPoint(np.zeros(2), -1.0, 2, 0), 0.5, False, 0.1, None,
                                              0.9, None, 3.0, -1.0)])
    write_trace(tr, tmp_path / "t.csv")
    rec = read_trace(tmp_path / "t.csv").records[0]
    assert rec.lower_bound is None and not rec.lower_bound_valid and rec.copies == 2


def test_poison_and_iterate_files(tmp_path, setup, budget_run):
    d, _, _ = setup
    poison, trace = budget_run
    write_poison(poison, tmp_path / "p.svm")
    back = load_dataset(tmp_path / "p.svm", "libsvm", d.domain, normalize="none")
    np.testing.assert_array_equal(back.X, np.array([p.x for p in poison]))
    assert "iter=0 copies=1" in (tmp_path / "p.svm").read_text().splitlines()[0]
    write_iterates(trace, tmp_path / "it.json", "hinge", CFG.c_r)
    ids, models = read_iterates(tmp_path / "it.json")
    assert ids == list(range(41)) and all(a.same_as(b) for a, b in zip(models, trace.iterates))


def test_summary(budget_run):
    _, trace = budget_run
    s = summarize(trace)
    assert s["n_p"] == 40 and s["stop_reason"] == "budget" and s["final"]["iteration"] == 40
    assert s["best_max_loss_diff"] == min(r.max_loss_diff for r in trace.records)


def test_attack_is_deterministic(setup):
    d, _, tp = setup
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = run_attack(d, tp, "hinge", CFG, d.domain, Budget(10), use_bias=False)[1]
        b = run_attack(d, tp, "hinge", CFG, d.domain, Budget(10), use_bias=False)[1]
    assert [r.max_loss_diff for r in a.records] == [r.max_loss_diff for r in b.records]
