"""Gaussian-kernel resmoothing of arbitrary fitted regressors.

A base regressor ``f`` (possibly piecewise constant) is replaced by its
convolution with an ``N(0, h^2)`` kernel along one exposure coordinate,

    f_h(x, z)  = E[f(x + hW, z)],
    f_h'(x, z) = E[W f(x + hW, z)] / h,

with the Gaussian expectation evaluated on a symmetric equally spaced grid.
All quadrature sums are taken over mirrored pairs of nodes, so odd grid
moments vanish exactly and a constant base has derivative exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .data import Dataset, FoldPartition


class ParityError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureGrid:
    nodes: NDArray[np.float64]
    weights: NDArray[np.float64]

    @property
    def J(self) -> int:
        return self.nodes.size

    def _halves(self):
        c = self.J // 2
        return c, self.nodes[c + 1:], self.weights[c + 1:]

    def moment(self, k: int) -> float:
        """``sum_j q_j w_j^k`` accumulated over mirrored pairs."""
        c, w, q = self._halves()
        if k % 2:
            return float(np.sum(q * w**k - q * w**k))
        centre = self.weights[c] * self.nodes[c] ** k
        return float(centre + 2 * np.sum(q * w**k))

    def expect(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Quadrature of ``E[g(W)]`` given ``values[..., j] = g(w_j)``."""
        c, _, q = self._halves()
        plus = values[..., c + 1:]
        minus = values[..., c - 1::-1] if c > 0 else values[..., :0]
        return self.weights[c] * values[..., c] + (plus + minus) @ q

    def expect_w(self, values: NDArray[np.float64]) -> NDArray[np.float64]:
        """Quadrature of ``E[W g(W)]``."""
        c, w, q = self._halves()
        plus = values[..., c + 1:]
        minus = values[..., c - 1::-1] if c > 0 else values[..., :0]
        return (plus - minus) @ (q * w)


def build_grid(J: int = 101, span: float = 5.0) -> QuadratureGrid:
    """Equally spaced nodes on ``[-span, span]`` with normal-density weights."""
    if J < 3 or J % 2 == 0:
        raise ParityError(f"J must be odd and at least 3, got {J}")
    if not span > 0:
        raise ValueError("span must be positive")
    half = (J - 1) // 2
    nodes = span * (np.arange(J) - half) / half
    dens = np.exp(-0.5 * nodes**2)
    # enforce exact mirror symmetry of the weights
    dens = 0.5 * (dens + dens[::-1])
    return QuadratureGrid(nodes, dens / dens.sum())


def as_predictor(model) -> Callable[[NDArray[np.float64]], NDArray[np.float64]]:
    if hasattr(model, "predict"):
        return model.predict
    if callable(model):
        return model
    raise TypeError(f"{model!r} is neither callable nor has a predict method")


def shifted_predictions(base, features: NDArray[np.float64], coord: int,
                        shifts: NDArray[np.float64]) -> NDArray[np.float64]:
    """Matrix ``F[i, s] = base(features[i] + shifts[s] * e_coord)``.

    Tree ensembles exposing ``section`` are evaluated through their exact
    one-dimensional profile, which avoids ``len(features) * len(shifts)``
    separate traversals.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    shifts = np.asarray(shifts, dtype=float)
    t = features[:, coord][:, None] + shifts[None, :]
    if hasattr(base, "section"):
        bp, values = base.section(features, coord)
        idx = np.searchsorted(bp, t, side="right")
        return np.take_along_axis(values, idx, axis=1)
    m, s = t.shape
    rep = np.repeat(features, s, axis=0)
    rep[:, coord] = t.ravel()
    return np.asarray(as_predictor(base)(rep), dtype=float).reshape(m, s)


@dataclass
class SmoothedModel:
    """Base regressor with one Gaussian bandwidth per exposure coordinate."""

    base: object
    bandwidths: NDArray[np.float64]
    grid: QuadratureGrid = field(default_factory=build_grid)

    def __post_init__(self) -> None:
        self.bandwidths = np.atleast_1d(np.asarray(self.bandwidths, dtype=float))
        if np.any(self.bandwidths <= 0):
            raise ValueError("bandwidths must be positive")

    def _shifted(self, features, coord):
        h = self.bandwidths[coord]
        return h, shifted_predictions(self.base, features, coord, h * self.grid.nodes)

    def predict(self, features, coord: int = 0) -> NDArray[np.float64]:
        _, F = self._shifted(features, coord)
        return self.grid.expect(F)

    def derivative(self, features, coord: int = 0) -> NDArray[np.float64]:
        h, F = self._shifted(features, coord)
        return self.grid.expect_w(F) / h

    def predict_and_derivative(self, features, coord: int = 0):
        h, F = self._shifted(features, coord)
        return self.grid.expect(F), self.grid.expect_w(F) / h


def _features(x, z):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.asarray(z, dtype=float)
    if x.ndim == 1 and z.ndim <= 1:
        return np.concatenate([x, np.atleast_1d(z)])[None, :]
    return np.hstack([np.atleast_2d(x), np.atleast_2d(z)])


def smooth_predict(sm: SmoothedModel, x, z, coord: int = 0):
    """Smoothed prediction at a single point or stacked rows of ``x`` and ``z``."""
    out = sm.predict(_features(x, z), coord)
    return float(out[0]) if out.size == 1 else out


def smooth_derivative(sm: SmoothedModel, x, z, coord: int = 0):
    out = sm.derivative(_features(x, z), coord)
    return float(out[0]) if out.size == 1 else out


def diff_derivative(base, features: NDArray[np.float64], D: float,
                    coord: int = 0) -> NDArray[np.float64]:
    """Central difference ``(f(x + D/2) - f(x - D/2)) / D`` along ``coord``."""
    if not D > 0:
        raise ValueError("D must be positive")
    F = shifted_predictions(base, features, coord, np.array([-D / 2, D / 2]))
    return (F[:, 1] - F[:, 0]) / D


def default_bandwidths(sd_x: float) -> NDArray[np.float64]:
    """``exp(k) / (2 sqrt 3) * sd_x`` for ``k = -5.0, -4.8, ..., 2.0``."""
    return np.exp(np.linspace(-5.0, 2.0, 36)) / (2 * math.sqrt(3)) * sd_x


@dataclass
class BandwidthSelection:
    candidates: NDArray[np.float64]
    cv: NDArray[np.float64]
    """CV score for ``[0, *candidates]``."""
    h_min: float
    se: NDArray[np.float64]
    """``se(h)`` per candidate; NaN where ``h < h_min``."""
    chosen: float
    fallback: bool
    tol: float

    @property
    def cv_chosen(self) -> float:
        return float(self.cv[1 + int(np.flatnonzero(self.candidates == self.chosen)[0])])


def choose_bandwidth(errors: NDArray[np.float64], candidates: Sequence[float],
                     tol: float) -> BandwidthSelection:
    """Selection rule applied to per-observation squared errors.

    ``errors[:, 0]`` holds the errors of the unsmoothed regressor and
    ``errors[:, l]`` those of bandwidth ``candidates[l - 1]``. Picks the largest
    candidate no smaller than the CV minimiser whose CV score lies within
    ``tol`` standard errors of the minimum, or the smallest candidate if none
    qualifies.
    """
    H = np.asarray(candidates, dtype=float)
    if H.size == 0:
        raise ValueError("the bandwidth set is empty")
    if np.any(H <= 0):
        raise ValueError("bandwidths must be positive")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    errors = np.asarray(errors, dtype=float)
    n = errors.shape[0]
    hs = np.concatenate([[0.0], H])
    cv = errors.mean(axis=0)
    i_min = int(np.argmin(cv))
    h_min = hs[i_min]
    se = np.full(H.size, np.nan)
    best = None
    for l, h in enumerate(H):
        if h < h_min:
            continue
        diff = errors[:, i_min] - errors[:, l + 1]
        se[l] = np.std(diff) / math.sqrt(n)
        if cv[l + 1] <= cv[i_min] + tol * se[l] and (best is None or h > best):
            best = h
    fallback = best is None
    chosen = float(H.min()) if fallback else float(best)
    return BandwidthSelection(H, cv, float(h_min), se, chosen, fallback, tol)


def bandwidth_errors(fits: Sequence, ds: Dataset, folds: FoldPartition,
                     candidates: NDArray[np.float64], coord: int = 0,
                     grid: QuadratureGrid | None = None) -> NDArray[np.float64]:
    """Per-observation squared errors ``err_i(h)`` for ``h in [0, *candidates]``.

    ``fits[k]`` must have been trained without fold ``k``.
    """
    grid = grid or build_grid()
    H = np.asarray(candidates, dtype=float)
    features = ds.features()
    errors = np.empty((ds.n, H.size + 1))
    shifts = np.concatenate([[0.0], (H[:, None] * grid.nodes[None, :]).ravel()])
    for k in range(folds.K):
        idx = folds.test_index(k)
        F = shifted_predictions(fits[k], features[idx], coord, shifts)
        resid0 = ds.y[idx] - F[:, 0]
        errors[idx, 0] = resid0**2
        smoothed = grid.expect(F[:, 1:].reshape(idx.size, H.size, grid.J))
        errors[idx, 1:] = (ds.y[idx, None] - smoothed) ** 2
    return errors


def select_bandwidth(ds: Dataset, folds: FoldPartition, spec, candidates=None,
                     tol: float = 2.0, coord: int = 0, fits: Sequence | None = None,
                     grid: QuadratureGrid | None = None) -> BandwidthSelection:
    """Cross-validated resmoothing bandwidth for exposure ``coord``.

    Trains one regressor per fold with ``spec`` unless ``fits`` supplies them.
    ``candidates`` defaults to :func:`default_bandwidths` of the exposure sd.
    """
    from .regression import fit_gbt

    if candidates is None:
        candidates = default_bandwidths(float(np.std(ds.x[:, coord])))
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise ValueError("the bandwidth set is empty")
    if fits is None:
        features = ds.features()
        fits = [
            fit_gbt(spec, features[folds.train_index(k)], ds.y[folds.train_index(k)])
            for k in range(folds.K)
        ]
    errors = bandwidth_errors(fits, ds, folds, candidates, coord, grid)
    return choose_bandwidth(errors, candidates, tol)
