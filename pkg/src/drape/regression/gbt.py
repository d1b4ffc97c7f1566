"""Histogram gradient-boosted regression trees (squared-error loss).

Features are quantised into at most ``n_bins`` quantile bins whose edges are
observed data values, so a fitted ensemble is invariant to strictly monotone
transforms of any column. Trees are grown level-wise to ``max_depth`` and
stored in heap layout (children of node ``k`` are ``2k+1`` and ``2k+2``); a
row goes left when ``x[feature] < threshold``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from numpy.typing import NDArray

from ..data import InsufficientDataError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class GBTSpec:
    rounds: int = 300
    learning_rate: float = 0.1
    max_depth: int = 4
    min_leaf: int = 10
    n_bins: int = 256
    subsample: float = 1.0
    reg_lambda: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not 2 <= self.n_bins <= 256:
            raise ValueError("n_bins must lie in [2, 256]")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must lie in (0, 1]")

    def replace(self, **kw) -> "GBTSpec":
        return GBTSpec(**{**asdict(self), **kw})


def bin_edges(column: NDArray[np.float64], n_bins: int) -> NDArray[np.float64]:
    """Rank-selected quantile edges; bin index is ``searchsorted(edges, v, 'right')``."""
    values = np.sort(column)
    uniq = np.unique(values)
    if uniq.size <= n_bins:
        return uniq[1:]
    n = values.size
    picks = values[(np.arange(1, n_bins) * n) // n_bins]
    edges = np.unique(picks)
    return edges[edges > values[0]]


@njit(cache=True)
def _boost(xb, y, n_bins, masks, rounds, lr, depth, min_leaf, lam, base):
    n, p = xb.shape
    n_nodes = 2 ** (depth + 1) - 1
    max_b = 1
    for f in range(p):
        if n_bins[f] > max_b:
            max_b = n_bins[f]
    feat = -np.ones((rounds, n_nodes), dtype=np.int32)
    split_bin = np.zeros((rounds, n_nodes), dtype=np.int32)
    value = np.zeros((rounds, n_nodes))
    pred = np.full(n, base)
    node_of = np.zeros(n, dtype=np.int32)
    resid = np.empty(n)
    half = 2 ** max(depth - 1, 0)
    hg = np.empty((half, p, max_b))
    hc = np.empty((half, p, max_b))
    gsum = np.empty(2**depth)
    cnt = np.empty(2**depth)
    inv = 1.0 / (np.arange(n + 1) + lam)
    for t in range(rounds):
        for i in range(n):
            resid[i] = y[i] - pred[i]
            node_of[i] = 0 if masks[t, i] else -1
        first = 0
        for level in range(depth + 1):
            width = 2**level
            gsum[:width] = 0.0
            cnt[:width] = 0.0
            for i in range(n):
                k = node_of[i]
                if k >= 0:
                    gsum[k - first] += resid[i]
                    cnt[k - first] += 1.0
            for j in range(width):
                if cnt[j] > 0:
                    value[t, first + j] = lr * gsum[j] / (cnt[j] + lam)
            if level == depth:
                break
            hg[:width] = 0.0
            hc[:width] = 0.0
            for i in range(n):
                k = node_of[i]
                if k >= 0:
                    j = k - first
                    for f in range(p):
                        b = xb[i, f]
                        hg[j, f, b] += resid[i]
                        hc[j, f, b] += 1.0
            any_split = False
            for j in range(width):
                total_c = cnt[j]
                if total_c < 2 * min_leaf:
                    continue
                total_g = gsum[j]
                parent = total_g * total_g / (total_c + lam)
                best = 1e-12
                best_f = -1
                best_b = 0
                tc = int(total_c)
                for f in range(p):
                    gl = 0.0
                    cl = 0
                    for b in range(n_bins[f] - 1):
                        c = int(hc[j, f, b])
                        if c == 0:
                            continue
                        gl += hg[j, f, b]
                        cl += c
                        if cl < min_leaf:
                            continue
                        cr = tc - cl
                        if cr < min_leaf:
                            break
                        gr = total_g - gl
                        gain = gl * gl * inv[cl] + gr * gr * inv[cr] - parent
                        if gain > best:
                            best = gain
                            best_f = f
                            best_b = b
                if best_f >= 0:
                    feat[t, first + j] = best_f
                    split_bin[t, first + j] = best_b
                    any_split = True
            if not any_split:
                break
            for i in range(n):
                k = node_of[i]
                if k >= 0:
                    f = feat[t, k]
                    if f < 0:
                        node_of[i] = -1
                    elif xb[i, f] <= split_bin[t, k]:
                        node_of[i] = 2 * k + 1
                    else:
                        node_of[i] = 2 * k + 2
            first += width
        # update predictions of every training row, sampled or not
        for i in range(n):
            k = 0
            while feat[t, k] >= 0:
                if xb[i, feat[t, k]] <= split_bin[t, k]:
                    k = 2 * k + 1
                else:
                    k = 2 * k + 2
            pred[i] += value[t, k]
    return feat, split_bin, value


@njit(cache=True)
def _predict(x, feat, thr, value, base):
    m = x.shape[0]
    n_trees = feat.shape[0]
    out = np.full(m, base)
    for i in range(m):
        acc = 0.0
        for t in range(n_trees):
            k = 0
            while feat[t, k] >= 0:
                if x[i, feat[t, k]] < thr[t, k]:
                    k = 2 * k + 1
                else:
                    k = 2 * k + 2
            acc += value[t, k]
        out[i] += acc
    return out


@dataclass
class GBTModel:
    """Fitted boosted ensemble. ``predict`` takes rows of ``[x, z]``."""

    base_score: float
    feature: NDArray[np.int32]
    threshold: NDArray[np.float64]
    value: NDArray[np.float64]
    n_features: int
    spec: GBTSpec = field(default_factory=GBTSpec)

    def predict(self, features: NDArray[np.float64]) -> NDArray[np.float64]:
        f = np.ascontiguousarray(np.atleast_2d(features), dtype=np.float64)
        if f.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {f.shape[1]}")
        return _predict(f, self.feature, self.threshold, self.value, self.base_score)

    def __call__(self, features):
        return self.predict(features)

    def breakpoints(self, coord: int) -> NDArray[np.float64]:
        return np.unique(self.threshold[self.feature == coord])

    def section(self, features: NDArray[np.float64], coord: int):
        """Exact profile of the ensemble along one coordinate.

        Returns ``(bp, values)`` such that, for row ``r`` of ``features`` with
        its ``coord`` entry replaced by ``t``, the prediction equals
        ``values[r, searchsorted(bp, t, side='right')]``.
        """
        f = np.ascontiguousarray(np.atleast_2d(features), dtype=np.float64)
        bp = self.breakpoints(coord)
        thr_idx = np.where(
            self.feature == coord, np.searchsorted(bp, self.threshold), -1
        ).astype(np.int64)
        values = _section_rows(
            f, coord, self.feature, self.threshold, thr_idx, self.value,
            self.base_score, bp.size + 1,
        )
        return bp, values

    def to_dict(self) -> dict:
        return {
            "format": "drape.gbt",
            "format_version": FORMAT_VERSION,
            "base_score": self.base_score,
            "n_features": self.n_features,
            "spec": asdict(self.spec),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBTModel":
        if d.get("format") != "drape.gbt" or d.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported model format")
        return cls(
            base_score=float(d["base_score"]),
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            value=np.asarray(d["value"], dtype=np.float64),
            n_features=int(d["n_features"]),
            spec=GBTSpec(**d["spec"]),
        )


@njit(cache=True)
def _section_rows(x, coord, feat, thr, thr_idx, value, base, n_intervals):
    m = x.shape[0]
    n_trees, n_nodes = feat.shape
    out = np.empty((m, n_intervals))
    stack_node = np.empty(n_nodes + 1, dtype=np.int64)
    stack_lo = np.empty(n_nodes + 1, dtype=np.int64)
    stack_hi = np.empty(n_nodes + 1, dtype=np.int64)
    diff = np.empty(n_intervals + 1)
    for i in range(m):
        diff[:] = 0.0
        for t in range(n_trees):
            stack_node[0] = 0
            stack_lo[0] = 0
            stack_hi[0] = n_intervals
            top = 1
            while top > 0:
                top -= 1
                k = stack_node[top]
                lo = stack_lo[top]
                hi = stack_hi[top]
                f = feat[t, k]
                if f < 0:
                    diff[lo] += value[t, k]
                    diff[hi] -= value[t, k]
                elif f == coord:
                    cut = thr_idx[t, k] + 1
                    if lo < cut:
                        stack_node[top] = 2 * k + 1
                        stack_lo[top] = lo
                        stack_hi[top] = min(hi, cut)
                        top += 1
                    if hi > cut:
                        stack_node[top] = 2 * k + 2
                        stack_lo[top] = max(lo, cut)
                        stack_hi[top] = hi
                        top += 1
                else:
                    if x[i, f] < thr[t, k]:
                        stack_node[top] = 2 * k + 1
                    else:
                        stack_node[top] = 2 * k + 2
                    stack_lo[top] = lo
                    stack_hi[top] = hi
                    top += 1
        acc = base
        for s in range(n_intervals):
            acc += diff[s]
            out[i, s] = acc
    return out


def fit_gbt(spec: GBTSpec, features: NDArray[np.float64], targets: NDArray[np.float64]) -> GBTModel:
    """Stagewise least-squares boosting of depth-limited histogram trees."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    n, p = x.shape
    if y.shape[0] != n:
        raise ValueError("features and targets have different lengths")
    if n < 2 * spec.min_leaf:
        raise InsufficientDataError(
            f"{n} rows is fewer than twice min_leaf={spec.min_leaf}"
        )
    edges = [bin_edges(x[:, j], spec.n_bins) for j in range(p)]
    xb = np.empty((n, p), dtype=np.int32)
    for j in range(p):
        xb[:, j] = np.searchsorted(edges[j], x[:, j], side="right")
    n_bins = np.array([e.size + 1 for e in edges], dtype=np.int32)

    rng = np.random.default_rng(spec.seed)
    if spec.subsample < 1.0:
        k = max(2 * spec.min_leaf, int(round(spec.subsample * n)))
        masks = np.zeros((spec.rounds, n), dtype=np.bool_)
        for t in range(spec.rounds):
            masks[t, rng.choice(n, size=min(k, n), replace=False)] = True
    else:
        masks = np.ones((spec.rounds, n), dtype=np.bool_)

    base = float(np.mean(y))
    feat, split_bin, value = _boost(
        xb, y, n_bins, masks, spec.rounds, spec.learning_rate,
        spec.max_depth, spec.min_leaf, spec.reg_lambda, base,
    )
    threshold = np.zeros(feat.shape)
    for j in range(p):
        sel = feat == j
        if sel.any():
            threshold[sel] = edges[j][split_bin[sel]]
    return GBTModel(base, feat, threshold, value, p, spec)
