"""Exact-greedy CART regression tree used for conditional scale estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


@dataclass
class RegressionTree:
    """Binary tree in flat arrays; a row goes left when ``x[feature] <= threshold``."""

    feature: NDArray[np.intp]
    threshold: NDArray[np.float64]
    left: NDArray[np.intp]
    right: NDArray[np.intp]
    value: NDArray[np.float64]

    def apply(self, x: NDArray[np.float64]) -> NDArray[np.intp]:
        x = np.atleast_2d(x)
        node = np.zeros(x.shape[0], dtype=np.intp)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            k = node[idx]
            go_left = x[idx, self.feature[k]] <= self.threshold[k]
            node[idx] = np.where(go_left, self.left[k], self.right[k])
            active = self.feature[node] >= 0
        return node

    def predict(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.value[self.apply(x)]


def _best_split(x, y, min_leaf):
    n, p = x.shape
    total = y.sum()
    parent = total * total / n
    best = (0.0, -1, 0.0)
    for j in range(p):
        order = np.argsort(x[:, j], kind="stable")
        xs = x[order, j]
        cs = np.cumsum(y[order])[:-1]
        n_left = np.arange(1, n)
        ok = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not ok.any():
            continue
        gain = cs**2 / n_left + (total - cs) ** 2 / (n - n_left) - parent
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0] * (1 + 1e-12) + 1e-15:
            best = (float(gain[i]), j, 0.5 * (xs[i] + xs[i + 1]))
    return best


def fit_tree(x: NDArray[np.float64], y: NDArray[np.float64],
             max_depth: int = 3, min_leaf: int = 50) -> RegressionTree:
    """Grow a least-squares (variance-reduction) tree; leaves hold target means."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(idx, depth):
        k = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        if depth >= max_depth or idx.size < 2 * min_leaf or x.shape[1] == 0:
            return k
        gain, j, thr = _best_split(x[idx], y[idx], min_leaf)
        if j < 0:
            return k
        mask = x[idx, j] <= thr
        feature[k] = j
        threshold[k] = thr
        left[k] = grow(idx[mask], depth + 1)
        right[k] = grow(idx[~mask], depth + 1)
        return k

    grow(np.arange(y.size), 0)
    return RegressionTree(
        np.array(feature, dtype=np.intp),
        np.array(threshold),
        np.array(left, dtype=np.intp),
        np.array(right, dtype=np.intp),
        np.array(value),
    )


@dataclass
class ScaleModel:
    """Conditional scale ``sigma(z) = sqrt(max(tree(z), floor**2))``."""

    tree: RegressionTree
    floor: float

    def predict(self, z: NDArray[np.float64]) -> NDArray[np.float64]:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        return np.sqrt(np.maximum(self.tree.predict(z), self.floor**2))

    __call__ = predict


def fit_variance_tree(z: NDArray[np.float64], squared_residuals: NDArray[np.float64],
                      min_leaf: int = 50, floor: float = 1e-2,
                      max_depth: int = 3) -> ScaleModel:
    r2 = np.asarray(squared_residuals, dtype=float)
    if np.any(r2 < 0):
        raise ValueError("squared residuals must be non-negative")
    if not floor > 0:
        raise ValueError("floor must be positive")
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    return ScaleModel(fit_tree(z, r2, max_depth=max_depth, min_leaf=min_leaf), floor)
