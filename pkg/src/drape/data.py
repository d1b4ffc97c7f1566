"""Data containers, fold partitioning and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.typing import NDArray


class DataError(ValueError):
    """Raised when input data violates a precondition."""


class MissingColumnError(DataError):
    pass


class ParseError(DataError):
    pass


class DegenerateColumnError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Response ``y``, exposures ``x`` (n x d) and controls ``z`` (n x p)."""

    y: NDArray[np.float64]
    x: NDArray[np.float64]
    z: NDArray[np.float64]
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).reshape(-1)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = y.shape[0]
        z = np.asarray(self.z, dtype=float)
        if z.size == 0:
            z = np.zeros((n, 0))
        elif z.ndim == 1:
            z = z[:, None]
        if x.shape[0] != n or z.shape[0] != n:
            raise DataError(
                f"row counts differ: y={n}, x={x.shape[0]}, z={z.shape[0]}"
            )
        if x.shape[1] < 1:
            raise DataError("at least one exposure column is required")
        for name, arr in (("y", y), ("x", x), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"non-finite values in {name}")
        for arr in (y, x, z):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if not self.x_names:
            object.__setattr__(
                self, "x_names", tuple(f"x{j + 1}" for j in range(x.shape[1]))
            )
        if not self.z_names:
            object.__setattr__(
                self, "z_names", tuple(f"z{j + 1}" for j in range(z.shape[1]))
            )

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.z.shape[1]

    def features(self) -> NDArray[np.float64]:
        """Design matrix ``[x, z]`` used by the response regression."""
        return np.hstack([self.x, self.z])

    def subset(self, idx: NDArray[np.intp]) -> "Dataset":
        return Dataset(self.y[idx], self.x[idx], self.z[idx], self.x_names, self.z_names)


@dataclass(frozen=True)
class FoldPartition:
    """Assignment of each observation to one of ``K`` folds (labels ``0..K-1``)."""

    assignment: NDArray[np.intp]
    K: int

    def __post_init__(self) -> None:
        a = np.asarray(self.assignment, dtype=np.intp)
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @property
    def n(self) -> int:
        return self.assignment.shape[0]

    def test_index(self, k: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.assignment == k)

    def train_index(self, k: int) -> NDArray[np.intp]:
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> NDArray[np.intp]:
        return np.bincount(self.assignment, minlength=self.K)


def make_folds(n: int, K: int, seed: int) -> FoldPartition:
    """Uniformly random balanced K-fold partition of ``range(n)``.

    Fold sizes differ by at most one. The partition is a deterministic
    function of ``(n, K, seed)``.
    """
    if K < 2:
        raise ValueError(f"K must be at least 2, got {K}")
    if n < K:
        raise InsufficientDataError(f"cannot split {n} observations into {K} folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.intp)
    assignment[rng.permutation(n)] = np.arange(n) % K
    return FoldPartition(assignment, K)


@dataclass(frozen=True)
class Standardization:
    """Column means and population standard deviations used by :func:`standardize`."""

    x_mean: NDArray[np.float64]
    x_sd: NDArray[np.float64]
    z_mean: NDArray[np.float64]
    z_sd: NDArray[np.float64]

    def unscale_theta(self, theta: NDArray[np.float64]) -> NDArray[np.float64]:
        """Map an APE computed on standardized exposures back to original units."""
        return np.asarray(theta) / self.x_sd

    def unscale_sigma(self, sigma: NDArray[np.float64]) -> NDArray[np.float64]:
        s = 1.0 / self.x_sd
        return np.asarray(sigma) * np.outer(s, s)


def _scale_columns(a: NDArray[np.float64], names: Sequence[str]):
    mean = a.mean(axis=0)
    centred = a - mean
    sd = np.sqrt(np.mean(centred**2, axis=0))
    for j, s in enumerate(sd):
        if not s > 0:
            raise DegenerateColumnError(f"column {names[j]!r} has zero variance")
    return centred / sd, mean, sd


def standardize(ds: Dataset) -> tuple[Dataset, Standardization]:
    """Centre and scale every x and z column (population sd, divisor n)."""
    x, xm, xs = _scale_columns(ds.x, ds.x_names)
    z, zm, zs = _scale_columns(ds.z, ds.z_names)
    out = Dataset(ds.y.copy(), x, z, ds.x_names, ds.z_names)
    return out, Standardization(xm, xs, zm, zs)


def load_csv(path: str | Path, x_cols: Sequence[str], y_col: str) -> Dataset:
    """Read a headered CSV file.

    ``y_col`` becomes the response, ``x_cols`` the exposures, and every other
    column the controls, in file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = [row for row in reader if row]

    for col in [y_col, *x_cols]:
        if col not in header:
            raise MissingColumnError(f"{path}: column {col!r} not found in header")
    if y_col in x_cols:
        raise DataError(f"column {y_col!r} used as both response and exposure")

    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}"
            )
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {i + 2}, column {header[j]!r}: cannot parse {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise ParseError(
                    f"{path}: row {i + 2}, column {header[j]!r}: non-finite value {cell!r}"
                )
            values[i, j] = v

    col = {name: j for j, name in enumerate(header)}
    z_cols = [h for h in header if h != y_col and h not in x_cols]
    return Dataset(
        y=values[:, col[y_col]],
        x=values[:, [col[c] for c in x_cols]],
        z=values[:, [col[c] for c in z_cols]] if z_cols else np.zeros((len(rows), 0)),
        x_names=tuple(x_cols),
        z_names=tuple(z_cols),
    )


def write_csv(ds: Dataset, path: str | Path, y_name: str = "y") -> None:
    """Write ``ds`` with columns ``y, x..., z...`` using round-trip float repr."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([y_name, *ds.x_names, *ds.z_names])
        for i in range(ds.n):
            w.writerow([repr(float(v)) for v in (ds.y[i], *ds.x[i], *ds.z[i])])
