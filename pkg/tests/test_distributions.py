import math

import numpy as np
import pytest
import sympy as sp
from scipy import integrate

from drape.distributions import FAMILIES, LIPSCHITZ_GRID, SymmetricMixture, get_family

NAMES = sorted(FAMILIES)


def quad(f):
    val, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13, limit=400)
    return val


@pytest.mark.parametrize("name", NAMES)
def test_standardized_moments(name):
    fam = get_family(name)
    p = lambda e: float(fam.density(e))
    assert quad(p) == pytest.approx(1.0, abs=1e-8)
    assert quad(lambda e: e * p(e)) == pytest.approx(0.0, abs=1e-8)
    assert quad(lambda e: e * e * p(e)) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("name", NAMES)
def test_score_is_log_density_derivative(name):
    fam = get_family(name)
    e = np.linspace(-6, 6, 241)
    step = 1e-5
    numeric = (fam.log_density(e + step) - fam.log_density(e - step)) / (2 * step)
    np.testing.assert_allclose(fam.score(e), numeric, atol=1e-8)


@pytest.mark.parametrize("name", NAMES)
def test_score_derivative_matches_difference(name):
    fam = get_family(name)
    e = np.linspace(-6, 6, 241)
    step = 1e-6
    numeric = (fam.score(e + step) - fam.score(e - step)) / (2 * step)
    np.testing.assert_allclose(fam.score_derivative(e), numeric, atol=1e-7)


@pytest.mark.parametrize("name", NAMES)
def test_score_is_odd(name):
    fam = get_family(name)
    e = np.linspace(0, 8, 97)
    assert np.array_equal(fam.score(-e), -fam.score(e))


@pytest.mark.parametrize("name", NAMES)
def test_fisher_information_finite(name):
    fam = get_family(name)
    info = quad(lambda e: float(fam.score(e)) ** 2 * float(fam.density(e)))
    assert np.isfinite(info) and info >= 1.0  # Cramer-Rao: unit variance


def test_normal_score_values():
    fam = get_family("normal")
    assert fam.score(1.0) == -1.0
    assert fam.lipschitz_constant() == 1.0


def test_logistic_score_and_constant():
    fam = get_family("logistic")
    assert fam.score(0.0) == 0.0
    s = math.sqrt(3) / math.pi
    assert fam.lipschitz_constant() == pytest.approx(1 / (2 * s * s))
    assert fam.lipschitz_constant() == pytest.approx(math.pi**2 / 6)


def test_t4_score_symbolic_oracle():
    # density of T / sqrt(2) for T ~ t_4, differentiated symbolically
    e = sp.symbols("e", real=True)
    t = sp.sqrt(2) * e
    log_p = sp.log(sp.sqrt(2)) + sp.log(sp.gamma(sp.Rational(5, 2))) \
        - sp.log(sp.sqrt(4 * sp.pi) * sp.gamma(2)) - sp.Rational(5, 2) * sp.log(1 + t**2 / 4)
    oracle = float(sp.diff(log_p, e).subs(e, 1))
    fam = get_family("t4")
    assert fam.score(1.0) == pytest.approx(oracle, abs=1e-10)
    assert float(fam.log_density(1.0)) == pytest.approx(float(log_p.subs(e, 1)), abs=1e-12)


def test_mixture_grid_constant_is_refinement_stable():
    fam = get_family("mix3")
    coarse = fam.lipschitz_constant()
    fine = float(np.max(np.abs(fam.score_derivative(np.linspace(-20, 20, 400_001)))))
    assert abs(coarse - fine) < 1e-6
    assert coarse == pytest.approx(3.0)
    assert LIPSCHITZ_GRID.size == 100_001


def test_mix3_score_sign_changes():
    x = np.linspace(-3, 3, 6001)
    r = get_family("mix3").score(x)
    changes = np.count_nonzero(np.diff(np.sign(r[r != 0])))
    assert changes == 3


def test_sampling_deterministic_and_standardized():
    fam = get_family("normal")
    assert np.array_equal(fam.sample(100, 3), fam.sample(100, 3))
    draws = fam.sample(10**6, 0)
    assert 0.99 <= draws.var() <= 1.01


def test_mix2_is_flat_topped():
    # components N(+-1/sqrt2, 1/2) sit exactly 2 sd apart: the log-density has
    # zero curvature at the origin and no dip, so the law is not bimodal
    fam = get_family("mix2")
    assert abs(float(fam.score_derivative(0.0))) < 1e-12
    e = np.linspace(0, 3, 3001)
    assert np.all(np.diff(fam.density(e)) <= 0)
    assert float(fam.density(0.0)) > float(fam.density(1 / math.sqrt(2)))


@pytest.mark.parametrize("name", NAMES)
def test_sample_moments(name):
    draws = get_family(name).sample(400_000, 11)
    assert abs(draws.mean()) < 0.01
    assert abs(draws.var() - 1) < 0.03


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown noise family"):
        get_family("cauchy")
    assert isinstance(get_family(FAMILIES["mix2"]), SymmetricMixture)
