"""Score estimation for the exposure given controls.

The score of ``X | Z`` is ``rho(x, z) = d/dx log p(x | z)``. Three estimators
are provided:

* a location–scale model ``X = m(Z) + sigma(Z) eps`` whose residual score is
  a penalised natural cubic spline fitted by score matching,
* a Gaussian-type comparator built on an L1 regression of ``X`` on a
  quadratic basis that omits the linear ``x`` term,
* the location–scale composition with a known residual law.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy import linalg, optimize

from .data import DataError
from .regression import GBTSpec, fit_gbt, fit_lasso, fit_variance_tree


class ConditioningError(np.linalg.LinAlgError):
    pass


class DegenerateVarianceError(DataError):
    pass


# -- natural cubic spline basis ------------------------------------------------

def _cube_plus(u):
    return np.maximum(u, 0.0) ** 3


def natural_basis(e: NDArray[np.float64], knots: NDArray[np.float64], order: int = 0):
    """Truncated-power natural cubic spline basis and its derivatives.

    Columns are ``1, e, d_0 - d_{K-2}, ..., d_{K-3} - d_{K-2}`` with
    ``d_k(e) = ((e - xi_k)_+^3 - (e - xi_{K-1})_+^3) / (xi_{K-1} - xi_k)``;
    every column is linear outside ``[xi_0, xi_{K-1}]``. ``order`` selects the
    derivative (0, 1 or 2).
    """
    e = np.asarray(e, dtype=float).reshape(-1)
    K = knots.size
    last = knots[-1]
    span = last - knots[:-1]
    u = e[:, None] - knots[None, :-1]
    v = (e - last)[:, None]
    if order == 0:
        d = (_cube_plus(u) - _cube_plus(v)) / span
        head = np.column_stack([np.ones_like(e), e])
    elif order == 1:
        d = 3 * (np.maximum(u, 0) ** 2 - np.maximum(v, 0) ** 2) / span
        head = np.column_stack([np.zeros_like(e), np.ones_like(e)])
    elif order == 2:
        d = 6 * (np.maximum(u, 0) - np.maximum(v, 0)) / span
        head = np.zeros((e.size, 2))
    else:
        raise ValueError("order must be 0, 1 or 2")
    return np.hstack([head, d[:, : K - 2] - d[:, [K - 2]]])


def roughness_gram(knots: NDArray[np.float64]) -> NDArray[np.float64]:
    """``Omega[a, b] = int N_a'' N_b''`` computed exactly.

    Second derivatives are piecewise linear between knots and vanish outside
    the boundary knots, so Simpson's rule on each segment is exact.
    """
    at = natural_basis(knots, knots, order=2)
    mid = natural_basis(0.5 * (knots[1:] + knots[:-1]), knots, order=2)
    h = np.diff(knots)
    lo, hi = at[:-1], at[1:]
    return (
        np.einsum("s,sa,sb->ab", h / 6, lo, lo)
        + np.einsum("s,sa,sb->ab", 4 * h / 6, mid, mid)
        + np.einsum("s,sa,sb->ab", h / 6, hi, hi)
    )


def quantile_knots(e: NDArray[np.float64], n_knots: int) -> NDArray[np.float64]:
    """Knots at the ``(i + 1/2) / K`` empirical quantiles, deduplicated."""
    levels = (np.arange(n_knots) + 0.5) / n_knots
    return np.unique(np.quantile(e, levels))


@dataclass
class SplineScoreModel:
    """Univariate score ``rho(e) = sum_a beta_a N_a(e)``."""

    knots: NDArray[np.float64]
    coef: NDArray[np.float64]
    lam: float
    df: float

    def __call__(self, e) -> NDArray[np.float64]:
        return natural_basis(e, self.knots) @ self.coef

    def derivative(self, e) -> NDArray[np.float64]:
        return natural_basis(e, self.knots, order=1) @ self.coef

    def objective(self, e, coef=None) -> float:
        """Penalised score-matching criterion at ``coef`` (default: fitted)."""
        b = self.coef if coef is None else np.asarray(coef)
        rho = natural_basis(e, self.knots) @ b
        drho = natural_basis(e, self.knots, order=1) @ b
        pen = b @ roughness_gram(self.knots) @ b if np.isfinite(self.lam) else 0.0
        return float(np.mean(rho**2 + 2 * drho) + (self.lam * pen if self.lam else 0.0))


def _solve_lambda(mu, df):
    """``lam`` with ``sum 1 / (1 + lam mu) = df``; ``mu`` are the penalty eigenvalues."""
    trace = lambda log_lam: np.sum(1.0 / (1.0 + np.exp(log_lam) * mu)) - df
    lo, hi = -30.0, 30.0
    while trace(hi) > 0 and hi < 200:
        hi += 20
    while trace(lo) < 0 and lo > -200:
        lo -= 20
    return float(np.exp(optimize.brentq(trace, lo, hi, xtol=1e-12)))


def fit_spline_score(residuals: NDArray[np.float64], df: float,
                     n_knots: int | None = None) -> SplineScoreModel:
    """Penalised score matching over natural cubic splines.

    Minimises ``mean(rho(e)^2 + 2 rho'(e)) + lam * int rho''^2``; the solution
    is ``beta = -(G + lam Omega)^{-1} c``. ``lam`` is calibrated so that
    ``trace((G + lam Omega)^{-1} G) = df``. ``df <= 2`` gives the linear fit
    ``-(e - mean) / var``.
    """
    e = np.asarray(residuals, dtype=float).reshape(-1)
    if df < 2:
        raise ValueError("df must be at least 2")
    if e.size < max(df, 3):
        raise DataError(f"{e.size} residuals are too few for df={df}")
    if not np.std(e) > 0:
        raise DegenerateVarianceError("residuals are constant")
    K = min(int(np.ceil(3 * df)), 30) if n_knots is None else n_knots
    knots = quantile_knots(e, max(K, 3))
    if knots.size < 3:
        knots = np.array([e.min(), np.median(e), e.max()])
    B = natural_basis(e, knots)
    G = B.T @ B / e.size
    c = natural_basis(e, knots, order=1).mean(axis=0)

    if df <= 2:
        beta = np.zeros(knots.size)
        beta[:2] = -np.linalg.solve(G[:2, :2], c[:2])
        return SplineScoreModel(knots, beta, np.inf, 2.0)

    omega = roughness_gram(knots)
    try:
        mu, V = linalg.eigh(omega, G)
    except linalg.LinAlgError as exc:
        raise ConditioningError(
            "basis Gram matrix is singular; use fewer knots or a larger penalty"
        ) from exc
    mu = np.maximum(mu, 0.0)
    lam = 0.0 if df >= knots.size else _solve_lambda(mu, df)
    beta = -V @ ((V.T @ c) / (1.0 + lam * mu))
    return SplineScoreModel(knots, beta, lam, float(np.sum(1.0 / (1.0 + lam * mu))))


# -- conditional scores -------------------------------------------------------

@dataclass
class ConstantModel:
    value: float

    def predict(self, z):
        return np.full(np.atleast_2d(z).shape[0] if np.ndim(z) > 1 else np.size(z), self.value)

    __call__ = predict


def _call(model, z):
    return np.asarray(model.predict(z) if hasattr(model, "predict") else model(z), dtype=float)


@dataclass
class ConditionalScoreModel:
    """``rho(x, z) = rho_eps((x - m(z)) / sigma(z)) / sigma(z)``."""

    location: object
    scale: object
    residual_score: Callable
    residual_score_derivative: Callable | None = None

    def residuals(self, x, z) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        s = _call(self.scale, z)
        return (np.asarray(x, dtype=float) - _call(self.location, z)) / s, s

    def __call__(self, x, z) -> NDArray[np.float64]:
        eps, s = self.residuals(x, z)
        return np.asarray(self.residual_score(eps), dtype=float) / s

    def derivative(self, x, z) -> NDArray[np.float64]:
        """``d rho / dx = rho_eps'(eps) / sigma^2``."""
        if self.residual_score_derivative is None:
            raise AttributeError("residual score has no derivative")
        eps, s = self.residuals(x, z)
        return np.asarray(self.residual_score_derivative(eps), dtype=float) / s**2


def eval_conditional_score(model: ConditionalScoreModel, x, z):
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    z_arr = np.asarray(z, dtype=float)
    if z_arr.ndim <= 1 and x_arr.size == 1:
        z_arr = z_arr.reshape(1, -1)
    out = model(x_arr, z_arr)
    return float(out[0]) if out.size == 1 else out


@dataclass(frozen=True)
class ScoreSpec:
    location: GBTSpec = field(default_factory=GBTSpec)
    df: float = 6.0
    tree_depth: int = 3
    tree_min_leaf: int = 50
    floor_fraction: float = 0.01


def fit_location_scale_score(x: NDArray[np.float64], z: NDArray[np.float64],
                             spec: ScoreSpec = ScoreSpec()) -> ConditionalScoreModel:
    """Boosted mean, tree variance and spline residual score, all in-sample."""
    x = np.asarray(x, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(x.size, -1)
    if z.shape[1] == 0:
        location = ConstantModel(float(x.mean()))
    else:
        location = fit_gbt(spec.location, z, x)
    resid = x - _call(location, z)
    floor = spec.floor_fraction * float(np.std(x)) or spec.floor_fraction
    scale = fit_variance_tree(z, resid**2, min_leaf=spec.tree_min_leaf,
                              floor=floor, max_depth=spec.tree_depth)
    eps = resid / scale.predict(z)
    if np.std(eps) > 0:
        rho = fit_spline_score(eps, spec.df)
        return ConditionalScoreModel(location, scale, rho, rho.derivative)
    # all residuals equal: fall back to the Gaussian score at the floor scale
    return ConditionalScoreModel(location, scale, lambda e: -np.asarray(e),
                                 lambda e: -np.ones_like(np.asarray(e)))


def known_family_score(family, location, scale) -> ConditionalScoreModel:
    return ConditionalScoreModel(location, scale, family.score, family.score_derivative)


# -- quadratic basis comparator -------------------------------------------------

def quadratic_basis(x: NDArray[np.float64], z: NDArray[np.float64]) -> NDArray[np.float64]:
    """Squares and pairwise products of ``(x, z_1..z_p)`` plus linear ``z``.

    Column order: ``x^2, x z_1, ..., x z_p`` then, for each ``j``,
    ``z_j, z_j^2, z_j z_{j+1}, ..., z_j z_p``. The constant is left to the
    intercept and the linear ``x`` term is omitted.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float).reshape(x.size, -1)
    cols = [x**2] + [x * z[:, j] for j in range(z.shape[1])]
    for j in range(z.shape[1]):
        cols.append(z[:, j])
        cols.extend(z[:, j] * z[:, k] for k in range(j, z.shape[1]))
    return np.column_stack(cols)


@dataclass
class BasisScoreModel:
    """``rho(x, z) = -(x - a - b(x, z)' beta) / s2``."""

    coef: NDArray[np.float64]
    intercept: float
    s2: float
    lam: float

    def fitted(self, x, z):
        return self.intercept + quadratic_basis(x, z) @ self.coef

    def __call__(self, x, z) -> NDArray[np.float64]:
        return -(np.asarray(x, dtype=float).reshape(-1) - self.fitted(x, z)) / self.s2


def fit_basis_score(x: NDArray[np.float64], z: NDArray[np.float64], lam: float) -> BasisScoreModel:
    x = np.asarray(x, dtype=float).reshape(-1)
    b = quadratic_basis(x, z)
    fit = fit_lasso(b, x, lam)
    s2 = float(np.mean(x * (x - fit.predict(b))))
    if not s2 > 0:
        raise DegenerateVarianceError(f"variance estimate {s2:.3g} is not positive")
    return BasisScoreModel(fit.coef, fit.intercept, s2, lam)
