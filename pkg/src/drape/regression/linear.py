"""Ordinary least squares with heteroskedasticity-robust covariance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


class SingularDesignError(np.linalg.LinAlgError):
    pass


@dataclass
class OLSFit:
    coef: NDArray[np.float64]
    cov: NDArray[np.float64]
    residuals: NDArray[np.float64]

    def predict(self, features: NDArray[np.float64]) -> NDArray[np.float64]:
        return np.atleast_2d(features) @ self.coef

    __call__ = predict

    @property
    def se(self) -> NDArray[np.float64]:
        return np.sqrt(np.diag(self.cov))


def fit_ols(features: NDArray[np.float64], targets: NDArray[np.float64]) -> OLSFit:
    """Least squares on a design that already contains any intercept column.

    ``cov`` is the HC0 sandwich ``(X'X)^-1 X' diag(e^2) X (X'X)^-1``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    if X.shape[0] < X.shape[1] or np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesignError(
            f"design matrix of shape {X.shape} is not of full column rank"
        )
    q, r = np.linalg.qr(X)
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - X @ coef
    r_inv = np.linalg.inv(r)
    bread = r_inv @ r_inv.T
    meat = (X * resid[:, None] ** 2).T @ X
    cov = bread @ meat @ bread
    return OLSFit(coef, 0.5 * (cov + cov.T), resid)
