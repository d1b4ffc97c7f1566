"""L1-penalised least squares by cyclic coordinate descent.

Minimises ``(1/2n) ||y - b0 - X b||^2 + lam * ||b||_1`` with an unpenalised
intercept, working on the Gram matrix of the centred design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.typing import NDArray

from ..data import make_folds


def soft_threshold(v, lam):
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


@dataclass
class L1Model:
    coef: NDArray[np.float64]
    intercept: float
    lam: float
    n_sweeps: int = 0
    objective_path: list[float] = field(default_factory=list)

    def predict(self, features: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.intercept + np.atleast_2d(features) @ self.coef

    __call__ = predict


def lasso_objective(features, targets, coef, intercept, lam) -> float:
    r = np.asarray(targets) - intercept - np.atleast_2d(features) @ coef
    return 0.5 * float(np.mean(r * r)) + lam * float(np.sum(np.abs(coef)))


def _prepare(features, targets, standardize):
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    x_mean = X.mean(axis=0)
    Xc = X - x_mean
    scale = np.sqrt(np.mean(Xc**2, axis=0)) if standardize else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    Xs = Xc / scale
    y_mean = float(y.mean())
    n = X.shape[0]
    gram = Xs.T @ Xs / n
    cov = Xs.T @ (y - y_mean) / n
    return x_mean, scale, y_mean, gram, cov


@njit(cache=True)
def _descend(gram, cov, lam, beta, tol, max_sweeps, y_var, track):
    p = beta.size
    g = gram @ beta
    path = np.empty(max_sweeps if track else 0)
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        max_step = 0.0
        for j in range(p):
            d = gram[j, j]
            if d <= 1e-14:
                continue
            old = beta[j]
            rho = cov[j] - g[j] + d * old
            if rho > lam:
                new = (rho - lam) / d
            elif rho < -lam:
                new = (rho + lam) / d
            else:
                new = 0.0
            if new != old:
                delta = new - old
                beta[j] = new
                for k in range(p):
                    g[k] += gram[k, j] * delta
                step = abs(delta) * np.sqrt(d)
                if step > max_step:
                    max_step = step
        if track:
            # 0.5*mean(r^2) = 0.5*(var(y) - 2 b'c + b'Gb)
            path[sweep] = 0.5 * (y_var - 2 * (beta @ cov) + beta @ g) + lam * np.abs(beta).sum()
        if max_step < tol:
            break
    return beta, sweeps, path[:sweeps] if track else path


def fit_lasso(features: NDArray[np.float64], targets: NDArray[np.float64], lam: float,
              standardize: bool = True, tol: float = 1e-7, max_sweeps: int = 10_000,
              track_objective: bool = False, warm_start: NDArray | None = None) -> L1Model:
    """Coordinate-descent lasso.

    With ``standardize`` the penalty acts on columns scaled to unit population
    sd; coefficients are always reported on the original scale.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    x_mean, scale, y_mean, gram, cov = _prepare(features, targets, standardize)
    y = np.asarray(targets, dtype=float)
    y_var = float(np.mean((y - y_mean) ** 2))
    beta = np.zeros(gram.shape[0]) if warm_start is None else warm_start * scale
    beta, sweeps, path = _descend(np.ascontiguousarray(gram), cov, float(lam),
                                  np.array(beta, dtype=float), tol, max_sweeps,
                                  y_var, track_objective)
    coef = beta / scale
    return L1Model(coef, y_mean - float(x_mean @ coef), lam, int(sweeps), path.tolist())


def lambda_max(features, targets, standardize: bool = True) -> float:
    _, _, _, _, cov = _prepare(features, targets, standardize)
    return float(np.max(np.abs(cov))) if cov.size else 0.0


def lambda_grid(features, targets, n_lambdas: int = 50, ratio: float = 1e-4,
                standardize: bool = True) -> NDArray[np.float64]:
    top = lambda_max(features, targets, standardize)
    return top * np.logspace(0.0, np.log10(ratio), n_lambdas)


def lasso_cv(features, targets, n_lambdas: int = 50, ratio: float = 1e-4,
             K: int = 5, seed: int = 0, standardize: bool = True):
    """Pick ``lam`` minimising K-fold CV squared error over a log grid.

    Returns ``(best_lam, grid, cv_errors)``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    grid = lambda_grid(X, y, n_lambdas, ratio, standardize)
    folds = make_folds(y.size, K, seed)
    errs = np.zeros(grid.size)
    for k in range(K):
        tr, te = folds.train_index(k), folds.test_index(k)
        coef = None
        for i, lam in enumerate(grid):
            m = fit_lasso(X[tr], y[tr], lam, standardize, tol=1e-6, warm_start=coef)
            coef = m.coef
            errs[i] += np.sum((y[te] - m.predict(X[te])) ** 2)
    errs /= y.size
    return float(grid[int(np.argmin(errs))]), grid, errs
