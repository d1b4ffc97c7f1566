"""Cross-fitted average partial effect estimators.

The main estimator averages the influence values

    psi_i = grad f(x_i, z_i) - rho(x_i, z_i) * (y_i - f(x_i, z_i))

with every nuisance trained on the folds not containing ``i``. Its
comparators are a numerical-difference/quadratic-basis variant of the same
construction, the partially linear double machine learning estimator and
ordinary least squares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .config import EstimatorConfig
from .data import DataError, Dataset, FoldPartition
from .regression import GBTSpec, fit_gbt, fit_ols
from .resmooth import (
    SmoothedModel,
    bandwidth_errors,
    build_grid,
    choose_bandwidth,
    default_bandwidths,
    diff_derivative,
)
from .score import (
    ConditionalScoreModel,
    ConstantModel,
    fit_basis_score,
    fit_location_scale_score,
)


class DegenerateExposureError(DataError):
    pass


@dataclass
class ApeEstimate:
    method: str
    theta: NDArray[np.float64]
    sigma: NDArray[np.float64]
    """Covariance of ``sqrt(n) (theta_hat - theta)``."""
    n: int
    alpha: float = 0.05
    seed: int | None = None
    config_digest: str = ""
    influence: NDArray[np.float64] | None = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        self.sigma = 0.5 * (self.sigma + self.sigma.T)

    @property
    def d(self) -> int:
        return self.theta.size

    @property
    def se(self) -> NDArray[np.float64]:
        return np.sqrt(np.diag(self.sigma) / self.n)

    @property
    def ci(self) -> NDArray[np.float64]:
        q = stats.norm.ppf(1 - self.alpha / 2)
        half = q * self.se
        return np.column_stack([self.theta - half, self.theta + half])

    def covers(self, truth) -> NDArray[np.bool_]:
        lo, hi = self.ci.T
        truth = np.broadcast_to(np.asarray(truth, dtype=float), lo.shape)
        return (lo <= truth) & (truth <= hi)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.sigma)[0])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n": self.n,
            "d": self.d,
            "theta": self.theta.tolist(),
            "sigma": self.sigma.tolist(),
            "ci": self.ci.tolist(),
            "alpha": self.alpha,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ApeEstimate":
        return cls(d["method"], np.array(d["theta"]), np.array(d["sigma"]), int(d["n"]),
                   float(d["alpha"]), d.get("seed"), d.get("config_digest", ""))


def _from_influence(method, psi, n, alpha, seed, config, **diag) -> ApeEstimate:
    theta = psi.mean(axis=0)
    centred = psi - theta
    sigma = centred.T @ centred / n
    est = ApeEstimate(method, theta, sigma, n, alpha, seed,
                      config.digest() if config is not None else "", psi, diag)
    est.diagnostics["sigma_min_eigenvalue"] = est.min_eigenvalue()
    return est


@dataclass
class NuisanceOverrides:
    """Replacement nuisance functions, used in place of fitted ones.

    ``f(x, z)`` returns shape ``(n,)``; ``grad`` and ``rho`` return ``(n, d)``.
    ``location``, ``scale`` and ``residual_score`` replace the components of
    the location–scale score for every exposure; the first two receive the
    conditioning matrix ``[x_{-j}, z]``.
    """

    f: Callable | None = None
    grad: Callable | None = None
    rho: Callable | None = None
    location: Callable | None = None
    scale: Callable | None = None
    residual_score: Callable | None = None


def fold_seed(seed: int, fold: int, role: int) -> int:
    """Independent stream per (fold, role) derived from the master seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(fold, role))
    return int(ss.generate_state(1)[0])


def conditioning(x: NDArray[np.float64], z: NDArray[np.float64], j: int) -> NDArray[np.float64]:
    """``[x_{-j}, z]``: everything the score of exposure ``j`` conditions on."""
    return np.hstack([np.delete(x, j, axis=1), z])


def fit_fold_regressions(ds: Dataset, folds: FoldPartition, spec: GBTSpec, seed: int) -> list:
    """One boosted regression of ``y`` on ``[x, z]`` per fold, trained out-of-fold."""
    features = ds.features()
    return [
        fit_gbt(spec.replace(seed=fold_seed(seed, k, 0)),
                features[folds.train_index(k)], ds.y[folds.train_index(k)])
        for k in range(folds.K)
    ]


def _check_folds(ds: Dataset, folds: FoldPartition) -> None:
    if folds.assignment.size != ds.n:
        raise DataError(f"fold assignment has {folds.assignment.size} rows, data has {ds.n}")
    if np.any(folds.sizes() == 0):
        raise DataError("every fold must contain at least one observation")


def drape_estimate(ds: Dataset, folds: FoldPartition, config: EstimatorConfig | None = None,
                   alpha: float = 0.05, seed: int = 0,
                   overrides: NuisanceOverrides | None = None) -> ApeEstimate:
    """Resmoothed-regression, location–scale-score estimator.

    Each exposure coordinate gets its own cross-validated bandwidth and its
    own conditional score model.
    """
    config = config or EstimatorConfig()
    ov = overrides or NuisanceOverrides()
    _check_folds(ds, folds)
    n, d = ds.n, ds.d
    features = ds.features()
    grid = build_grid(config.grid_size, config.grid_span)

    need_f = ov.f is None or ov.grad is None
    fits = fit_fold_regressions(ds, folds, config.regression, seed) if need_f else None
    bandwidths = np.zeros(d)
    selections = []
    if need_f:
        for j in range(d):
            H = default_bandwidths(float(np.std(ds.x[:, j])))
            errors = bandwidth_errors(fits, ds, folds, H, coord=j, grid=grid)
            sel = choose_bandwidth(errors, H, config.tol)
            bandwidths[j] = sel.chosen
            selections.append(sel)

    psi = np.empty((n, d))
    for k in range(folds.K):
        tr, te = folds.train_index(k), folds.test_index(k)
        x_te, z_te = ds.x[te], ds.z[te]
        sm = SmoothedModel(fits[k], bandwidths, grid) if need_f else None
        for j in range(d):
            if sm is not None:
                f_j, g_j = sm.predict_and_derivative(features[te], j)
            if ov.f is not None:
                f_j = np.asarray(ov.f(x_te, z_te), dtype=float)
            if ov.grad is not None:
                g_j = np.asarray(ov.grad(x_te, z_te), dtype=float).reshape(te.size, d)[:, j]
            if ov.rho is not None:
                r_j = np.asarray(ov.rho(x_te, z_te), dtype=float).reshape(te.size, d)[:, j]
            else:
                model = _score_model(ds, tr, j, config, seed, k, ov)
                r_j = model(ds.x[te, j], conditioning(x_te, z_te, j))
            psi[te, j] = g_j - r_j * (ds.y[te] - f_j)

    return _from_influence("drape", psi, n, alpha, seed, config,
                           bandwidths=bandwidths.tolist(),
                           bandwidth_fallback=[s.fallback for s in selections])


def _score_model(ds, tr, j, config, seed, k, ov) -> ConditionalScoreModel:
    cond = conditioning(ds.x[tr], ds.z[tr], j)
    spec = config.score
    spec = replace(spec, location=spec.location.replace(seed=fold_seed(seed, k, 1 + j)))
    if ov.location is None and ov.scale is None and ov.residual_score is None:
        return fit_location_scale_score(ds.x[tr, j], cond, spec)
    from .regression import fit_variance_tree
    from .score import fit_spline_score

    x = ds.x[tr, j]
    if ov.location is not None:
        location = ov.location
    elif cond.shape[1] == 0:
        location = ConstantModel(float(x.mean()))
    else:
        location = fit_gbt(spec.location, cond, x)
    resid = x - np.asarray(location(cond) if not hasattr(location, "predict")
                           else location.predict(cond), dtype=float)
    if ov.scale is not None:
        scale = ov.scale
    else:
        floor = spec.floor_fraction * float(np.std(x))
        scale = fit_variance_tree(cond, resid**2, spec.tree_min_leaf, floor, spec.tree_depth)
    if ov.residual_score is not None:
        return ConditionalScoreModel(location, scale, ov.residual_score)
    s = np.asarray(scale.predict(cond) if hasattr(scale, "predict") else scale(cond))
    return ConditionalScoreModel(location, scale, fit_spline_score(resid / s, spec.df))


def difference_basis_estimate(ds: Dataset, folds: FoldPartition,
                              config: EstimatorConfig | None = None, alpha: float = 0.05,
                              seed: int = 0, D: NDArray[np.float64] | float | None = None,
                              lam: float | None = None) -> ApeEstimate:
    """Central-difference derivative with the quadratic-basis score.

    ``D`` defaults to a quarter of the sample sd of each exposure.
    """
    config = config or EstimatorConfig()
    _check_folds(ds, folds)
    n, d = ds.n, ds.d
    lam = config.basis_lambda if lam is None else lam
    D = np.std(ds.x, axis=0) / 4 if D is None else np.broadcast_to(np.asarray(D, float), (d,))
    features = ds.features()
    fits = fit_fold_regressions(ds, folds, config.regression, seed)
    psi = np.empty((n, d))
    for k in range(folds.K):
        tr, te = folds.train_index(k), folds.test_index(k)
        f_te = fits[k].predict(features[te])
        for j in range(d):
            g_j = diff_derivative(fits[k], features[te], float(D[j]), coord=j)
            score = fit_basis_score(ds.x[tr, j], conditioning(ds.x[tr], ds.z[tr], j), lam)
            r_j = score(ds.x[te, j], conditioning(ds.x[te], ds.z[te], j))
            psi[te, j] = g_j - r_j * (ds.y[te] - f_te)
    return _from_influence("diffbasis", psi, n, alpha, seed, config, D=np.asarray(D).tolist())


def plr_estimate(ds: Dataset, folds: FoldPartition, config: EstimatorConfig | None = None,
                 alpha: float = 0.05, seed: int = 0) -> ApeEstimate:
    """Partialling-out estimator of ``E[Cov(X, Y | Z)] / E[Var(X | Z)]``.

    Without controls both nuisances are constants and are taken as the
    full-sample means, which reproduces the least-squares slope.
    """
    config = config or EstimatorConfig()
    _check_folds(ds, folds)
    if ds.d != 1:
        raise DataError("the partially linear comparator needs a single exposure")
    x, y = ds.x[:, 0], ds.y
    if ds.p == 0:
        u, v = y - y.mean(), x - x.mean()
    else:
        u, v = np.empty(ds.n), np.empty(ds.n)
        for k in range(folds.K):
            tr, te = folds.train_index(k), folds.test_index(k)
            ell = fit_gbt(config.plr_outcome.replace(seed=fold_seed(seed, k, 0)), ds.z[tr], y[tr])
            m = fit_gbt(config.score.location.replace(seed=fold_seed(seed, k, 1)), ds.z[tr], x[tr])
            u[te] = y[te] - ell.predict(ds.z[te])
            v[te] = x[te] - m.predict(ds.z[te])
    vv = float(np.sum(v * v))
    if vv == 0:
        raise DegenerateExposureError("exposure residuals are identically zero")
    theta = float(np.sum(v * u)) / vv
    psi = (u - theta * v) * v
    sigma = float(np.mean(psi**2)) / (vv / ds.n) ** 2
    est = ApeEstimate("plr", [theta], [[sigma]], ds.n, alpha, seed, config.digest())
    est.diagnostics["sigma_min_eigenvalue"] = sigma
    return est


def ols_ape(ds: Dataset, alpha: float = 0.05, seed: int | None = None,
            config: EstimatorConfig | None = None) -> ApeEstimate:
    """Coefficients on ``x`` from least squares of ``y`` on ``(1, x, z)``, HC0 errors."""
    design = np.hstack([np.ones((ds.n, 1)), ds.x, ds.z])
    fit = fit_ols(design, ds.y)
    sl = slice(1, 1 + ds.d)
    est = ApeEstimate("ols", fit.coef[sl], ds.n * fit.cov[sl, sl], ds.n, alpha, seed,
                      config.digest() if config is not None else "")
    est.diagnostics["sigma_min_eigenvalue"] = est.min_eigenvalue()
    return est


METHODS = ("drape", "diffbasis", "plr", "ols")


def estimate(method: str, ds: Dataset, folds: FoldPartition,
             config: EstimatorConfig | None = None, alpha: float = 0.05, seed: int = 0,
             **kw) -> ApeEstimate:
    """Dispatch on ``method``; extra keywords go to the chosen estimator."""
    if method == "drape":
        return drape_estimate(ds, folds, config, alpha, seed, **kw)
    if method == "diffbasis":
        return difference_basis_estimate(ds, folds, config, alpha, seed, **kw)
    if method == "plr":
        return plr_estimate(ds, folds, config, alpha, seed)
    if method == "ols":
        return ols_ape(ds, alpha, seed, config)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def z_quantile(alpha: float) -> float:
    return float(stats.norm.ppf(1 - alpha / 2))


__all__ = [
    "ApeEstimate", "NuisanceOverrides", "DegenerateExposureError", "METHODS",
    "drape_estimate", "difference_basis_estimate", "plr_estimate", "ols_ape",
    "estimate", "fit_fold_regressions", "fold_seed", "conditioning", "z_quantile",
]
