import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drape.data import Dataset, make_folds
from drape.regression import GBTSpec, fit_gbt
from drape.resmooth import (
    ParityError,
    SmoothedModel,
    build_grid,
    choose_bandwidth,
    default_bandwidths,
    diff_derivative,
    select_bandwidth,
    shifted_predictions,
    smooth_derivative,
    smooth_predict,
)

GRID = build_grid()


def linear(a, b):
    return lambda f: a + b * f[:, 0]


def step(f):
    return (f[:, 0] > 0).astype(float)


# ---- grid ------------------------------------------------------------------

def test_grid_moments():
    assert abs(GRID.weights.sum() - 1) <= 1e-14
    assert GRID.moment(1) == 0.0
    assert GRID.moment(3) == 0.0
    assert 0.995 < GRID.moment(2) < 1.0
    direct = float(np.sum(GRID.weights * GRID.nodes**2))
    assert GRID.moment(2) == pytest.approx(direct, abs=1e-15)


def test_grid_symmetry():
    assert np.array_equal(GRID.nodes, -GRID.nodes[::-1])
    assert np.array_equal(GRID.weights, GRID.weights[::-1])
    assert np.allclose(np.diff(GRID.nodes), 0.1)


def test_grid_three_nodes():
    g = build_grid(3, 1.0)
    np.testing.assert_array_equal(g.nodes, [-1.0, 0.0, 1.0])
    phi = np.exp(-0.5 * np.array([1.0, 0.0, 1.0]))
    np.testing.assert_allclose(g.weights, phi / phi.sum(), rtol=1e-15)


@pytest.mark.parametrize("J", [2, 100, 1])
def test_grid_parity(J):
    with pytest.raises(ParityError):
        build_grid(J, 5.0)


# ---- smoothing -------------------------------------------------------------

@pytest.mark.parametrize("h", [0.01, 0.3, 2.0])
def test_constant_base(h):
    sm = SmoothedModel(lambda f: np.full(f.shape[0], 2.5), [h])
    assert smooth_predict(sm, 0.7, [1.0]) == pytest.approx(2.5, abs=1e-14)
    assert smooth_derivative(sm, 0.7, [1.0]) == 0.0


def test_linear_base():
    sm = SmoothedModel(linear(1.0, -3.0), [0.4])
    x = np.linspace(-2, 2, 9)
    z = np.zeros((9, 1))
    np.testing.assert_allclose(smooth_predict(sm, x[:, None], z), 1.0 - 3.0 * x, atol=1e-13)
    np.testing.assert_allclose(smooth_derivative(sm, x[:, None], z), -3.0 * GRID.moment(2),
                               rtol=1e-13)


def test_quadratic_base():
    sm = SmoothedModel(lambda f: f[:, 0] ** 2, [1.0])
    assert smooth_predict(sm, 1.5, []) == pytest.approx(2.25 + GRID.moment(2), abs=1e-13)


@pytest.mark.parametrize("h", [0.1, 0.5, 1.0])
def test_step_base_at_origin(h):
    sm = SmoothedModel(step, [h])
    half = float(np.sum(GRID.weights * GRID.nodes * (GRID.nodes > 0)))
    assert smooth_derivative(sm, 0.0, []) == pytest.approx(half / h, rel=1e-12)
    assert smooth_derivative(sm, 0.0, []) == pytest.approx(1 / math.sqrt(2 * math.pi) / h,
                                                          rel=1e-3)


def test_rejects_nonpositive_bandwidth():
    with pytest.raises(ValueError):
        SmoothedModel(step, [0.0])


def random_steps(seed):
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.uniform(-2, 2, 8))
    jumps = rng.normal(size=8)
    return cuts, jumps, lambda f: (f[:, :1] > cuts).astype(float) @ jumps


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), h=st.floats(0.1, 1.0), x=st.floats(-2, 2))
def test_derivative_of_step_base_matches_convolution(seed, h, x):
    # exact Gaussian convolution of sum_k a_k 1{x > c_k} has derivative
    # sum_k a_k phi((x - c_k) / h) / h; a fine grid reproduces it
    cuts, jumps, base = random_steps(seed)
    sm = SmoothedModel(base, [h], build_grid(4001, 8.0))
    exact = float(np.sum(jumps * np.exp(-0.5 * ((x - cuts) / h) ** 2))) / (h * math.sqrt(2 * math.pi))
    tol = 0.004 * np.abs(jumps).sum() / h
    assert smooth_derivative(sm, x, []) == pytest.approx(exact, abs=tol)


SMOOTH_BASES = [
    lambda f: np.sin(f[:, 0]) + f[:, 0],
    lambda f: np.tanh(3 * f[:, 0]),
    lambda f: np.log1p(f[:, 0] ** 2),
]


@settings(max_examples=30, deadline=None)
@given(which=st.integers(0, 2), h=st.floats(0.1, 2.0), x=st.floats(-3, 3))
def test_derivative_is_derivative_of_prediction(which, h, x):
    sm = SmoothedModel(SMOOTH_BASES[which], [h])
    eps = 1e-5 * h
    fd = (smooth_predict(sm, x + eps, []) - smooth_predict(sm, x - eps, [])) / (2 * eps)
    assert smooth_derivative(sm, x, []) == pytest.approx(fd, rel=1e-4, abs=1e-6)


@settings(max_examples=20, deadline=None)
@given(which=st.integers(0, 2), h=st.floats(0.1, 2.0), x=st.floats(-3, 3))
def test_grid_refinement_stable_for_smooth_base(which, h, x):
    base = SMOOTH_BASES[which]
    a = smooth_predict(SmoothedModel(base, [h], build_grid(101, 5.0)), x, [])
    b = smooth_predict(SmoothedModel(base, [h], build_grid(201, 5.0)), x, [])
    assert abs(a - b) < 1e-6


def test_smoothing_one_coordinate_of_additive_base():
    base = lambda f: np.sin(f[:, 0]) + f[:, 1] ** 2
    sm = SmoothedModel(base, [0.5, 0.5])
    rows = np.zeros((7, 3))
    rows[:, 1] = np.linspace(-1, 1, 7)
    d0 = sm.derivative(rows, coord=0)
    assert np.allclose(d0, d0[0], atol=1e-14)


def test_section_path_equals_generic_path():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(300, 3))
    y = np.sin(X[:, 0]) + X[:, 1]
    model = fit_gbt(GBTSpec(rounds=30, max_depth=3), X, y)
    shifts = 0.3 * GRID.nodes
    fast = shifted_predictions(model, X[:25], 0, shifts)
    slow = shifted_predictions(model.predict, X[:25], 0, shifts)
    np.testing.assert_allclose(fast, slow, rtol=0, atol=1e-13)


# ---- difference comparator -------------------------------------------------

def test_difference_linear_and_quadratic():
    f = np.array([[0.3, 1.0], [-1.2, 0.0]])
    np.testing.assert_allclose(diff_derivative(linear(2.0, 1.7), f, 0.25), 1.7, rtol=1e-12)
    np.testing.assert_allclose(diff_derivative(lambda g: g[:, 0] ** 2, f, 0.25), 2 * f[:, 0],
                               rtol=1e-12)


def test_difference_step():
    assert diff_derivative(step, np.zeros((1, 1)), 0.5)[0] == 2.0
    with pytest.raises(ValueError):
        diff_derivative(step, np.zeros((1, 1)), 0.0)


# ---- bandwidth selection ---------------------------------------------------

H = default_bandwidths(1.0)


def test_default_bandwidths():
    assert H.size == 36
    assert H[0] == pytest.approx(math.exp(-5) / (2 * math.sqrt(3)))
    assert H[-1] == pytest.approx(math.exp(2) / (2 * math.sqrt(3)))


def test_identical_errors_select_largest():
    errors = np.tile(np.random.default_rng(0).exponential(size=(50, 1)), (1, H.size + 1))
    sel = choose_bandwidth(errors, H, tol=2.0)
    assert sel.chosen == H.max()
    assert not sel.fallback
    assert np.all(sel.se == 0)


def test_increasing_cv_with_zero_tol_falls_back():
    rng = np.random.default_rng(1)
    base = rng.exponential(size=(80, 1))
    errors = base + np.arange(H.size + 1)[None, :] * 0.01
    sel = choose_bandwidth(errors, H, tol=0.0)
    assert sel.h_min == 0.0
    assert sel.fallback
    assert sel.chosen == H.min()


def test_selection_errors():
    with pytest.raises(ValueError):
        choose_bandwidth(np.zeros((5, 1)), [], 2.0)
    with pytest.raises(ValueError):
        choose_bandwidth(np.zeros((5, 2)), [-1.0], 2.0)
    with pytest.raises(ValueError):
        choose_bandwidth(np.zeros((5, 2)), [1.0], -1.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), tol=st.floats(0, 3))
def test_selection_invariant(seed, tol):
    rng = np.random.default_rng(seed)
    errors = rng.exponential(size=(30, 6)) * rng.uniform(0.5, 1.5, size=6)
    cand = np.array([0.1, 0.2, 0.4, 0.8, 1.6])
    sel = choose_bandwidth(errors, cand, tol)
    assert sel.chosen in cand
    if not sel.fallback:
        i_min = int(np.argmin(sel.cv))
        l = int(np.flatnonzero(cand == sel.chosen)[0])
        assert sel.chosen >= sel.h_min
        assert sel.cv[l + 1] <= sel.cv[i_min] + tol * sel.se[l]


def test_select_bandwidth_on_smooth_truth():
    rng = np.random.default_rng(3)
    n = 1000
    x = rng.normal(size=(n, 1))
    z = rng.normal(size=(n, 2))
    y = np.sin(2 * x[:, 0]) + z[:, 0] + 0.5 * rng.normal(size=n)
    ds = Dataset(y, x, z)
    sel = select_bandwidth(ds, make_folds(n, 5, 0), GBTSpec(rounds=100, max_depth=3))
    assert sel.chosen > 0
    i = 1 + int(np.flatnonzero(sel.candidates == sel.chosen)[0])
    l = i - 1
    assert sel.cv[i] <= sel.cv[0] + 2 * sel.se[l] or sel.h_min > 0
