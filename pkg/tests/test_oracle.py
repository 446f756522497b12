import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtpoison import _kernels
from mtpoison.data import FeatureDomain, L1Ball, make_two_gaussians
from mtpoison.model import LinearModel, TrainConfig, losses, point_loss, train
from mtpoison.oracle import loss_distance, max_loss_diff_approx, max_loss_diff_hinge_exact

BOX = FeatureDomain.box(1, -1.0, 1.0)
UNIT = FeatureDomain.box(1, 0.0, 1.0)


def grid_max(loss, t, p, lo, hi, step):
    """Exhaustive 1-D / 2-D grid over the box and both labels."""
    axes = [np.arange(a, b + step / 2, step) for a, b in zip(lo, hi)]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
    best = -np.inf
    for y in (1.0, -1.0):
        yy = np.full(len(G), y)
        best = max(best, float((losses(loss, t, G, yy) - losses(loss, p, G, yy)).max()))
    return best


def test_exact_example_with_label_tie():
    t, p = LinearModel([2.0]), LinearModel([1.0])
    r = max_loss_diff_hinge_exact(t, p, BOX)
    assert r.exact and r.value == pytest.approx(1.0, abs=1e-12)
    assert r.value == pytest.approx(grid_max("hinge", t, p, [-1], [1], 1e-3), abs=1e-9)
    # (x=-1, y=+1) and (x=+1, y=-1) tie; +1 comes first
    assert r.y_star == 1.0 and r.x_star[0] == -1.0


def test_exact_example_unit_box():
    t, p = LinearModel([0.0]), LinearModel([1.0])
    r = max_loss_diff_hinge_exact(t, p, UNIT)
    assert r.value == pytest.approx(grid_max("hinge", t, p, [0], [1], 1e-3), abs=1e-9)
    assert r.value == pytest.approx(1.0) and r.y_star == 1.0 and r.x_star[0] == pytest.approx(1.0)


def test_identical_models_give_zero():
    m = LinearModel([0.3, -0.7], 0.2)
    dom = FeatureDomain.box(2)
    assert max_loss_diff_hinge_exact(m, m, dom).value == 0.0
    assert max_loss_diff_approx("logistic", m, m, dom, restarts=2, steps=20).value == 0.0


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="dimension"):
        max_loss_diff_hinge_exact(LinearModel([1.0]), LinearModel([1.0]), FeatureDomain.box(2))


def test_asymmetric_distance():
    a, b = LinearModel([2.0]), LinearModel([1.0])
    assert loss_distance(a, b, "hinge", BOX) == (pytest.approx(1.0), True)
    assert loss_distance(b, a, "hinge", BOX)[0] == pytest.approx(0.5)
    assert loss_distance(b, a, "hinge", BOX)[0] == pytest.approx(grid_max("hinge", b, a, [-1], [1], 1e-3), abs=1e-9)
    assert loss_distance(a, a, "hinge", BOX)[0] == 0.0


def test_exact_mode_rejects_logistic():
    with pytest.raises(ValueError):
        loss_distance(LinearModel([1.0]), LinearModel([0.0]), "logistic", BOX, "exact")
    with pytest.raises(ValueError):
        loss_distance(LinearModel([1.0]), LinearModel([0.0]), "hinge", BOX, "sideways")


def test_approx_logistic_example():
    t, p = LinearModel([3.0]), LinearModel([0.0])
    r = max_loss_diff_approx("logistic", t, p, BOX, seed=0)
    expected = np.log1p(np.exp(3.0)) - np.log(2.0)
    assert not r.exact
    assert r.value == pytest.approx(expected, abs=1e-9)
    assert r.value == pytest.approx(grid_max("logistic", t, p, [-1], [1], 1e-4), abs=1e-9)
    assert r.value == pytest.approx(2.3554, abs=5e-5)
    assert r.y_star == 1.0 and r.x_star[0] == -1.0


@pytest.mark.parametrize("t,p,dom", [([2.0], [1.0], BOX), ([0.0], [1.0], UNIT), ([1.0], [2.0], BOX)])
def test_approx_brackets_exact_on_1d(t, p, dom):
    t, p = LinearModel(t), LinearModel(p)
    ex = max_loss_diff_hinge_exact(t, p, dom).value
    ap = max_loss_diff_approx("hinge", t, p, dom, seed=3).value
    assert 0.99 * ex <= ap <= ex + 1e-6


def test_approx_is_deterministic_and_backend_independent():
    rng = np.random.default_rng(0)
    t, p = LinearModel(rng.normal(size=3), 0.1), LinearModel(rng.normal(size=3), -0.4)
    dom = FeatureDomain.box(3, -1, 1)
    a = max_loss_diff_approx("logistic", t, p, dom, restarts=4, steps=200, seed=11)
    b = max_loss_diff_approx("logistic", t, p, dom, restarts=4, steps=200, seed=11)
    assert a.value == b.value and np.array_equal(a.x_star, b.x_star)
    with _kernels.use_numba(False):
        c = max_loss_diff_approx("logistic", t, p, dom, restarts=4, steps=200, seed=11)
    assert c.value == pytest.approx(a.value, abs=1e-9)


def test_approx_requires_restarts():
    with pytest.raises(ValueError):
        max_loss_diff_approx("hinge", LinearModel([1.0]), LinearModel([0.0]), BOX, restarts=0)


def _pair(rng, d, scale=2.0, bias=True):
    b = (lambda: float(rng.normal())) if bias else (lambda: 0.0)
    return LinearModel(rng.normal(size=d) * scale, b()), LinearModel(rng.normal(size=d) * scale, b())


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5))
def test_exact_soundness(seed, d):
    rng = np.random.default_rng(seed)
    t, p = _pair(rng, d)
    dom = FeatureDomain(rng.uniform(-2, 0, d), rng.uniform(0, 2, d))
    r = max_loss_diff_hinge_exact(t, p, dom)
    assert dom.contains(r.x_star) and r.y_star in (1.0, -1.0)
    recomputed = point_loss("hinge", t, r.x_star, r.y_star) - point_loss("hinge", p, r.x_star, r.y_star)
    assert abs(recomputed - r.value) <= 1e-9
    # no sampled point beats it, and the approximate oracle never does either
    X = dom.sample(rng, 2000)
    for y in (1.0, -1.0):
        yy = np.full(len(X), y)
        assert (losses("hinge", t, X, yy) - losses("hinge", p, X, yy)).max() <= r.value + 1e-9
    assert max_loss_diff_approx("hinge", t, p, dom, restarts=3, steps=200, seed=seed).value <= r.value + 1e-9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_exact_completeness_against_grid(seed):
    rng = np.random.default_rng(seed)
    t, p = _pair(rng, 2)
    dom = FeatureDomain.box(2)
    r = max_loss_diff_hinge_exact(t, p, dom)
    assert r.value >= grid_max("hinge", t, p, [0, 0], [1, 1], 1e-2) - 1e-9


def test_distance_to_trained_model_is_nonnegative():
    data = make_two_gaussians(120, seed=1)
    rng = np.random.default_rng(1)
    for c_r in (0.01, 0.1):
        theta2 = train("hinge", data, TrainConfig(c_r=c_r), use_bias=False)
        for _ in range(20):
            theta1 = LinearModel(theta2.weights + rng.normal(size=2), 0.0)
            assert loss_distance(theta1, theta2, "hinge", data.domain)[0] >= -1e-12


def test_l1_ball_domain():
    t, p = LinearModel([1.0, -0.5]), LinearModel([0.2, 0.3])
    r = max_loss_diff_hinge_exact(t, p, L1Ball(2, 1.5))
    assert np.abs(r.x_star).sum() <= 1.5 + 1e-9
    # dense sampling inside the ball never exceeds the LP value
    rng = np.random.default_rng(0)
    X = rng.uniform(-1.5, 1.5, size=(20000, 2))
    X = X[np.abs(X).sum(axis=1) <= 1.5]
    for y in (1.0, -1.0):
        yy = np.full(len(X), y)
        assert (losses("hinge", t, X, yy) - losses("hinge", p, X, yy)).max() <= r.value + 1e-9


def _l1_pair(rng, d, r):
    out = []
    for _ in range(2):
        w = rng.normal(size=d)
        out.append(LinearModel(w / np.abs(w).sum() * r * rng.uniform(0.05, 1.0)))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.floats(0.2, 5.0))
def test_closeness_implies_parameter_closeness(seed, d, r):
    # if theta is eps-close to theta' on {||x||_1 <= d/r}, then ||theta - theta'||_1 <= r eps
    rng = np.random.default_rng(seed)
    a, b = _l1_pair(rng, d, r)
    eps = max_loss_diff_hinge_exact(a, b, L1Ball(d, d / r)).value
    assert np.abs(a.weights - b.weights).sum() <= r * eps + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.floats(0.1, 5.0))
def test_parameter_closeness_implies_closeness(seed, d, q):
    rng = np.random.default_rng(seed)
    a, b = _l1_pair(rng, d, float(rng.uniform(0.2, 5.0)))
    eps = np.abs(a.weights - b.weights).sum()
    assert max_loss_diff_hinge_exact(a, b, L1Ball(d, q)).value <= q * eps + 1e-9
