"""Synthetic settings, ground truth and repeated-experiment drivers.

Predictors follow a location–scale model ``X = m(Z) + sigma(Z) eps`` with
equicorrelated Gaussian controls, ``m(z) = 1{z_1 > 0}`` and
``sigma(z) = sqrt(3/2)`` when ``z_3 < 0``, ``1/sqrt(2)`` otherwise, so that
``E[sigma^2(Z)] = 1``. Responses are ``f(X, Z) + N(0, 1)`` for one of three
regression functions built from sinusoidal and sigmoidal pieces.

Seeds are laddered: repeat ``r`` of an experiment with master seed ``s``
draws everything from ``SeedSequence(s, spawn_key=(r,))``, so the first
``R`` records of a run are shared by every longer run.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from numpy.typing import NDArray

from .config import EstimatorConfig
from .data import Dataset, make_folds
from .distributions import FAMILIES, get_family
from .estimator import METHODS, NuisanceOverrides, drape_estimate, estimate
from .regression import fit_gbt
from .resmooth import (
    SmoothedModel,
    bandwidth_errors,
    build_grid,
    choose_bandwidth,
    default_bandwidths,
    diff_derivative,
)
from .score import fit_basis_score, fit_location_scale_score

RESPONSES = ("plm", "add", "int")
NOISES = tuple(FAMILIES)
SIM_METHODS = METHODS + ("oracle",)

# Var(X) = Var(1{Z_1 > 0}) + E[sigma^2(Z)] = 1/4 + 1
POPULATION_SD_X = math.sqrt(1.25)


@dataclass(frozen=True)
class SimSetting:
    """One cell of the simulation grid.

    With ``predictors_csv`` set, ``(x, z)`` are read from that file (first
    listed column is the exposure), centred and scaled, and reused for every
    repeat; only the response noise is redrawn.
    """

    response: str = "plm"
    noise: str = "normal"
    n: int = 1000
    p: int = 9
    corr: float = 0.5
    predictors_csv: str | None = None
    x_col: str | None = None

    def __post_init__(self) -> None:
        if self.response not in RESPONSES:
            raise ValueError(f"unknown setting {self.response!r}; choose from {RESPONSES}")
        if self.predictors_csv is None and self.noise not in NOISES:
            raise ValueError(f"unknown noise {self.noise!r}; choose from {NOISES}")
        if self.n < 1:
            raise ValueError("n must be positive")

    @property
    def label(self) -> str:
        source = "csv" if self.predictors_csv else self.noise
        return f"{self.response}/{source}"


def all_settings(n: int = 1000) -> list[SimSetting]:
    return [SimSetting(r, e, n) for r in RESPONSES for e in NOISES]


# -- regression functions -------------------------------------------------------

def sino(u, a):
    return np.exp(-0.5 * u * u) * np.sin(a * u)


def sino_deriv(u, a):
    return np.exp(-0.5 * u * u) * (a * np.cos(a * u) - u * np.sin(a * u))


def sigm(u, s):
    return 1.0 / (1.0 + np.exp(-s * u))


def sigm_deriv(u, s):
    g = sigm(u, s)
    return s * g * (1.0 - g)


def regression_function(response: str, x, z) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=float)
    z2 = np.asarray(z, dtype=float)[:, 1]
    if response == "plm":
        return x + sigm(z2, 1) + sino(z2, 1)
    if response == "add":
        return sigm(x, 1) + sino(x, 1) + sino(z2, 3)
    if response == "int":
        return sigm(x, 3) + sino(x, 3) + sino(z2, 3) + x * z2
    raise ValueError(f"unknown setting {response!r}")


def regression_derivative(response: str, x, z) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=float)
    z2 = np.asarray(z, dtype=float)[:, 1]
    if response == "plm":
        return np.ones_like(x)
    if response == "add":
        return sigm_deriv(x, 1) + sino_deriv(x, 1)
    if response == "int":
        return sigm_deriv(x, 3) + sino_deriv(x, 3) + z2
    raise ValueError(f"unknown setting {response!r}")


def location(z) -> NDArray[np.float64]:
    return (np.asarray(z)[:, 0] > 0).astype(float)


def scale(z) -> NDArray[np.float64]:
    return np.where(np.asarray(z)[:, 2] < 0, math.sqrt(1.5), math.sqrt(0.5))


def true_score(setting: SimSetting, x, z) -> NDArray[np.float64]:
    if setting.predictors_csv:
        raise ValueError("the score of file-based predictors is unknown")
    s = scale(z)
    return get_family(setting.noise).score((np.asarray(x) - location(z)) / s) / s


# -- data generation -----------------------------------------------------------

def equicorrelation_factor(p: int, corr: float) -> NDArray[np.float64]:
    cov = np.full((p, p), corr)
    np.fill_diagonal(cov, 1.0)
    return np.linalg.cholesky(cov)


def gen_predictors(setting: SimSetting, n: int | None, seed):
    """``(x, z)`` with ``x`` of shape ``(n,)`` and ``z`` of shape ``(n, p)``."""
    if setting.predictors_csv:
        return _csv_predictors(setting.predictors_csv, setting.x_col)
    n = setting.n if n is None else n
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, setting.p)) @ equicorrelation_factor(setting.p, setting.corr).T
    eps = get_family(setting.noise)._draw(n, rng)
    return location(z) + scale(z) * eps, z


@lru_cache(maxsize=4)
def _csv_predictors(path: str, x_col: str | None):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    j = header.index(x_col) if x_col else 0
    body = (body - body.mean(axis=0)) / body.std(axis=0)
    x = body[:, j].copy()
    z = np.delete(body, j, axis=1)
    x.setflags(write=False)
    z.setflags(write=False)
    return x, z


def gen_response(setting: SimSetting, x, z, seed) -> NDArray[np.float64]:
    rng = np.random.default_rng(seed)
    f = regression_function(setting.response, x, z)
    return f + rng.standard_normal(f.shape[0])


@dataclass(frozen=True)
class RepeatSeeds:
    predictors: np.random.SeedSequence
    response: np.random.SeedSequence
    folds: int
    models: int


def repeat_seeds(seed: int, repeat: int) -> RepeatSeeds:
    children = np.random.SeedSequence(seed, spawn_key=(repeat,)).spawn(4)
    return RepeatSeeds(
        children[0], children[1],
        int(children[2].generate_state(1)[0]), int(children[3].generate_state(1)[0]),
    )


def simulate_dataset(setting: SimSetting, seed: int, repeat: int = 0) -> Dataset:
    s = repeat_seeds(seed, repeat)
    x, z = gen_predictors(setting, setting.n, s.predictors)
    y = gen_response(setting, x, z, s.response)
    return Dataset(y, x[:, None], z)


# -- ground truth ------------------------------------------------------------------

def true_ape_mc(setting: SimSetting, mc_n: int = 10**6, seed: int = 0,
                chunk: int = 250_000) -> tuple[float, float]:
    """Monte Carlo mean of the analytic derivative and its standard error."""
    if setting.predictors_csv:
        x, z = gen_predictors(setting, None, seed)
        g = regression_derivative(setting.response, x, z)
        return float(g.mean()), 0.0
    total = total_sq = 0.0
    seeds = np.random.SeedSequence(seed).spawn(-(-mc_n // chunk))
    done = 0
    for s in seeds:
        m = min(chunk, mc_n - done)
        x, z = gen_predictors(setting, m, s)
        g = regression_derivative(setting.response, x, z)
        total += g.sum()
        total_sq += (g * g).sum()
        done += m
    mean = total / mc_n
    var = max(total_sq / mc_n - mean * mean, 0.0)
    return float(mean), math.sqrt(var / mc_n)


def true_ape(setting: SimSetting, mc_n: int = 10**6, seed: int = 0) -> tuple[float, float]:
    """``(theta, mc_se)``; the partially linear response has slope exactly 1."""
    if setting.response == "plm":
        return 1.0, 0.0
    return true_ape_mc(setting, mc_n, seed)


@lru_cache(maxsize=64)
def _cached_truth(setting: SimSetting) -> tuple[float, float]:
    return true_ape(setting, 4 * 10**6, 20240101)


def reference_truth(setting: SimSetting) -> tuple[float, float]:
    """High-accuracy ``theta`` used to score coverage (cached per setting)."""
    return _cached_truth(replace(setting, n=1))


# -- coverage experiments ------------------------------------------------------------

def oracle_overrides(setting: SimSetting) -> NuisanceOverrides:
    r = setting.response
    return NuisanceOverrides(
        f=lambda x, z: regression_function(r, x[:, 0], z),
        grad=lambda x, z: regression_derivative(r, x[:, 0], z)[:, None],
        rho=lambda x, z: true_score(setting, x[:, 0], z)[:, None],
    )


def run_one(setting: SimSetting, method: str, seed: int, repeat: int,
            config: EstimatorConfig | None = None, alpha: float = 0.05) -> dict:
    """One repeat: simulate, estimate, and return a flat record."""
    config = config or EstimatorConfig()
    s = repeat_seeds(seed, repeat)
    ds = simulate_dataset(setting, seed, repeat)
    folds = make_folds(ds.n, config.folds, s.folds)
    if method == "oracle":
        est = drape_estimate(ds, folds, config, alpha, s.models, oracle_overrides(setting))
        est.method = "oracle"
    elif method == "diffbasis" and not setting.predictors_csv:
        est = estimate(method, ds, folds, config, alpha, s.models, D=POPULATION_SD_X / 4)
    else:
        est = estimate(method, ds, folds, config, alpha, s.models)
    lo, hi = est.ci[0]
    truth, _ = reference_truth(setting)
    return {
        "setting": setting.response,
        "noise": "csv" if setting.predictors_csv else setting.noise,
        "method": method,
        "repeat": repeat,
        "n": ds.n,
        "theta": float(est.theta[0]),
        "se": float(est.se[0]),
        "ci_lo": float(lo),
        "ci_hi": float(hi),
        "covered": bool(lo <= truth <= hi),
        "truth": truth,
    }


def _run_one_star(args):
    setting, method, seed, repeat, config_dict, alpha = args
    return run_one(setting, method, seed, repeat, EstimatorConfig.from_dict(config_dict), alpha)


@dataclass
class CoverageReport:
    setting: str
    noise: str
    method: str
    seed: int
    truth: float
    truth_se: float
    records: list[dict] = field(default_factory=list)
    config_digest: str = ""

    @property
    def repeats(self) -> int:
        return len(self.records)

    @property
    def coverage(self) -> float:
        return float(np.mean([r["covered"] for r in self.records]))

    @property
    def mean_theta(self) -> float:
        return float(np.mean([r["theta"] for r in self.records]))

    @property
    def median_width(self) -> float:
        return float(np.median([r["ci_hi"] - r["ci_lo"] for r in self.records]))

    def summary(self) -> dict:
        return {
            "setting": self.setting, "noise": self.noise, "method": self.method,
            "repeats": self.repeats, "seed": self.seed, "truth": self.truth,
            "truth_se": self.truth_se, "coverage": self.coverage,
            "mean_theta": self.mean_theta, "median_width": self.median_width,
            "config_digest": self.config_digest,
        }

    def to_json(self) -> str:
        return json.dumps({**self.summary(), "records": self.records}, indent=2)

    def write_csv(self, path) -> None:
        cols = list(self.records[0]) + ["seed", "config_digest"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.records:
                w.writerow({**{k: repr(v) if isinstance(v, float) else v for k, v in r.items()},
                            "seed": self.seed, "config_digest": self.config_digest})


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("DRAPE_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def run_coverage(setting: SimSetting, method: str, repeats: int, seed: int = 0,
                 config: EstimatorConfig | None = None, threads: int | None = 1,
                 alpha: float = 0.05) -> CoverageReport:
    """Coverage of the nominal ``1 - alpha`` interval over ``repeats`` datasets.

    Records are returned in repeat order and do not depend on ``threads``.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if method not in SIM_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {SIM_METHODS}")
    config = config or EstimatorConfig()
    threads = resolve_threads(threads)
    truth, truth_se = reference_truth(setting)
    jobs = [(setting, method, seed, r, config.to_dict(), alpha) for r in range(repeats)]
    if threads == 1 or repeats == 1:
        records = [_run_one_star(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, repeats)) as pool:
            records = list(pool.map(_run_one_star, jobs))
    return CoverageReport(setting.response, records[0]["noise"], method, seed,
                          truth, truth_se, records, config.digest())


# -- nuisance accuracy ---------------------------------------------------------------

def nuisance_mse(setting: SimSetting, n_train: int = 800, n_test: int = 1000, seed: int = 0,
                 config: EstimatorConfig | None = None) -> dict[str, float]:
    """Out-of-sample squared errors of every nuisance estimator.

    All models are fitted once on a training draw; errors are measured
    against the analytic truth on an independent test draw. The
    resmoothing bandwidth is chosen by cross-validation on the training
    draw and applied to the full-training regression.
    """
    config = config or EstimatorConfig()
    ss = np.random.SeedSequence(seed).spawn(6)
    x, z = gen_predictors(setting, n_train, ss[0])
    y = gen_response(setting, x, z, ss[1])
    xt, zt = gen_predictors(setting, n_test, ss[2])
    train = Dataset(y, x[:, None], z)
    features, features_t = train.features(), np.column_stack([xt, zt])
    model_seed = int(ss[3].generate_state(1)[0])

    f_tilde = fit_gbt(config.regression.replace(seed=model_seed), features, y)
    folds = make_folds(n_train, config.folds, int(ss[4].generate_state(1)[0]))
    fold_fits = [
        fit_gbt(config.regression.replace(seed=model_seed + 1 + k),
                features[folds.train_index(k)], y[folds.train_index(k)])
        for k in range(folds.K)
    ]
    grid = build_grid(config.grid_size, config.grid_span)
    H = default_bandwidths(float(np.std(x)))
    sel = choose_bandwidth(bandwidth_errors(fold_fits, train, folds, H, 0, grid), H, config.tol)
    sm = SmoothedModel(f_tilde, [sel.chosen], grid)
    f_smooth, d_smooth = sm.predict_and_derivative(features_t)
    D = POPULATION_SD_X / 4 if not setting.predictors_csv else float(np.std(x)) / 4
    d_diff = diff_derivative(f_tilde, features_t, D)
    f_true = regression_function(setting.response, xt, zt)
    d_true = regression_derivative(setting.response, xt, zt)

    score_spec = replace(config.score, location=config.score.location.replace(seed=model_seed))
    spline = fit_location_scale_score(x, z, score_spec)
    basis = fit_basis_score(x, z, config.basis_lambda)
    rho_true = true_score(setting, xt, zt)

    mse = lambda a, b: float(np.mean((a - b) ** 2))
    return {
        "score_spline": mse(spline(xt, zt), rho_true),
        "score_basis": mse(basis(xt, zt), rho_true),
        "deriv_resmooth": mse(d_smooth, d_true),
        "deriv_difference": mse(d_diff, d_true),
        "regr_original": mse(f_tilde.predict(features_t), f_true),
        "regr_resmooth": mse(f_smooth, f_true),
        "bandwidth": sel.chosen,
    }


def mse_table(setting: SimSetting, repeats: int, n_train: int = 800, n_test: int = 1000,
              seed: int = 0, config: EstimatorConfig | None = None,
              threads: int | None = 1) -> list[dict]:
    """``nuisance_mse`` for ``repeats`` laddered seeds, one row per repeat."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    config = config or EstimatorConfig()
    seeds = [int(np.random.SeedSequence(seed, spawn_key=(r,)).generate_state(1)[0])
             for r in range(repeats)]
    args = [(setting, n_train, n_test, s, config) for s in seeds]
    threads = resolve_threads(threads)
    if threads == 1 or repeats == 1:
        rows = [nuisance_mse(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=min(threads, repeats)) as pool:
            rows = list(pool.map(_nuisance_star, args))
    return [{"repeat": r, "seed": s, **row} for r, (s, row) in enumerate(zip(seeds, rows))]


def _nuisance_star(args):
    return nuisance_mse(*args)
