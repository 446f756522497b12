import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from mtpoison.lp import LPInfeasible, bounded_simplex, box_linear_max, l1_linear_max


def _vertex_max(c, lo, hi, A, b):
    """Brute force for 2-D: objective at every vertex of box ∩ halfspaces."""
    lines = [(np.array([1.0, 0]), lo[0]), (np.array([1.0, 0]), hi[0]),
             (np.array([0, 1.0]), lo[1]), (np.array([0, 1.0]), hi[1])] + list(zip(A, b))
    best = -np.inf
    for (a1, b1), (a2, b2) in itertools.combinations(lines, 2):
        M = np.array([a1, a2])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, [b1, b2])
        if np.all(x >= lo - 1e-9) and np.all(x <= hi + 1e-9) and np.all(A @ x <= b + 1e-9):
            best = max(best, float(c @ x))
    return best


def test_sign_rule_example():
    x, v, ok = box_linear_max([1.0, -2.0], 0.0, [0, 0], [1, 1])
    assert ok and v == 1.0
    np.testing.assert_array_equal(x, [1.0, 0.0])


def test_clipped_maximiser_example():
    x, v, ok = box_linear_max([1.0], 0.0, [0.0], [1.0], [([1.0], 0.5)])
    assert ok and v == pytest.approx(0.5) and x[0] == pytest.approx(0.5)


def test_two_constraint_example():
    cons = [([1.0, 1.0], 1.0), ([1.0, -1.0], 0.0)]
    x, v, ok = box_linear_max([1.0, 1.0], 0.0, [0, 0], [1, 1], cons)
    oracle = _vertex_max(np.array([1.0, 1.0]), np.zeros(2), np.ones(2), np.array([[1.0, 1], [1, -1]]),
                         np.array([1.0, 0.0]))
    assert ok and v == pytest.approx(oracle, abs=1e-12) and v == pytest.approx(1.0, abs=1e-12)
    assert x[0] <= x[1] + 1e-12 and x.sum() <= 1 + 1e-12


def test_infeasible_is_a_return_state():
    x, v, ok = box_linear_max([1.0], 0.0, [0.0], [1.0], [([1.0], -0.5)])
    assert not ok and x is None and v is None
    x, v, ok = box_linear_max([1.0, 1.0], 0.0, [0, 0], [1, 1], [([1.0, 1.0], 0.5), ([-1.0, -1.0], -0.8)])
    assert not ok


def test_zero_row_constraints():
    assert box_linear_max([1.0], 2.0, [0.0], [1.0], [([0.0], 1.0)])[1] == 3.0
    assert not box_linear_max([1.0], 2.0, [0.0], [1.0], [([0.0], -1.0)])[2]


def test_too_many_constraints():
    with pytest.raises(ValueError):
        box_linear_max([1.0], 0.0, [0.0], [1.0], [([1.0], 1.0)] * 3)


def test_simplex_with_fixed_variable_terminates():
    # regression: a degenerate instance that once cycled on a fixed artificial column
    c = np.array([0.27392906590093297, -0.5726094050626782, 0.0, -1.1530419740393554, 0.2607301266979909])
    A = np.array([[-0.02530032926412006, 0.27438159608727786, -0.5784269986000683, -1.1509612478497493,
                   0.44701815053155675],
                  [-1.1070132650577227, 0.5853324666466068, -1.7417273425997286, -0.1789984841245339,
                   -0.630313837115518]])
    b = np.array([0.26837311131653563, -0.5292762162227943])
    lo = np.array([-0.667256471374842, -0.6597180009096958, -0.8894280066657452, -0.5545168440260978,
                   -0.8902387399213725])
    hi = np.array([0.41955781246871926, 0.5894486328324585, 0.2744542787516384, -0.41121975632281205,
                   0.3531021540754091])
    x, v = bounded_simplex(c, A, b, lo, hi, max_iter=200)
    ref = linprog(-c, A_eq=A, b_eq=b, bounds=list(zip(lo, hi)), method="highs")
    assert v == pytest.approx(-ref.fun, abs=1e-9)
    np.testing.assert_allclose(A @ x, b, atol=1e-9)


def test_simplex_reports_infeasibility():
    with pytest.raises(LPInfeasible):
        bounded_simplex([1.0, 1.0], [[1.0, 1.0]], [3.0], [0, 0], [1, 1])


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_box_lp_matches_highs(seed):
    rng = np.random.default_rng(seed)
    d, k = int(rng.integers(1, 7)), int(rng.integers(0, 3))
    c = rng.normal(size=d)
    c[rng.random(d) < 0.2] = 0.0
    lo = rng.uniform(-1, 0, d)
    hi = lo + rng.uniform(0, 2, d)
    if rng.random() < 0.1:
        hi[0] = lo[0]
    cons = [(rng.normal(size=d), 0.5 * rng.normal()) for _ in range(k)]
    x, v, ok = box_linear_max(c, 0.3, lo, hi, cons)
    A = np.array([a for a, _ in cons]).reshape(k, d)
    b = np.array([bb for _, bb in cons])
    ref = linprog(-c, A_ub=A if k else None, b_ub=b if k else None, bounds=list(zip(lo, hi)), method="highs")
    assert ok == (ref.status == 0)
    if ok:
        assert v == pytest.approx(0.3 - ref.fun, abs=1e-7)
        assert np.all(x >= lo) and np.all(x <= hi)
        assert np.all(A @ x <= b + 1e-8)
        assert c @ x + 0.3 == pytest.approx(v, abs=1e-12)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_l1_lp_matches_highs(seed):
    rng = np.random.default_rng(seed)
    d, k = int(rng.integers(1, 6)), int(rng.integers(0, 3))
    R = float(rng.uniform(0.1, 3.0))
    c = rng.normal(size=d)
    cons = [(rng.normal(size=d), rng.normal()) for _ in range(k)]
    x, v, ok = l1_linear_max(c, 0.0, R, cons)
    A = np.array([np.concatenate([a, -a]) for a, _ in cons] + [np.ones(2 * d)])
    b = np.array([bb for _, bb in cons] + [R])
    ref = linprog(-np.concatenate([c, -c]), A_ub=A, b_ub=b, bounds=[(0, None)] * (2 * d), method="highs")
    assert ok == (ref.status == 0)
    if ok:
        assert v == pytest.approx(-ref.fun, abs=1e-7)
        assert np.abs(x).sum() <= R + 1e-9
