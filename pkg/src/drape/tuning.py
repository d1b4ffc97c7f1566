"""Pre-tuning of nuisance hyperparameters on simulated train/test splits.

Each regression target is tuned by random search over boosting
hyperparameters, scored by held-out squared error pooled across the
simulation grid. The variance-tree complexity and the spline degrees of
freedom are chosen jointly by the held-out score-matching loss
``mean(rho^2 + 2 d rho / dx)`` of the whole conditional score, which equals
the squared error to the true score up to a constant. The lasso penalty of
the basis score is the median over datasets of the five-fold CV choice.
"""

from __future__ import annotations

import numpy as np

from .regression import GBTSpec, fit_gbt, fit_variance_tree, lasso_cv
from .score import ScoreSpec, fit_spline_score, quadratic_basis
from .simharness import (
    SimSetting,
    all_settings,
    gen_predictors,
    gen_response,
    reference_truth,
)

SEARCH_SPACE = {
    "rounds": [50, 100, 200, 300, 500],
    "learning_rate": [0.02, 0.05, 0.1, 0.2],
    "max_depth": [1, 2, 3, 4, 5],
    "min_leaf": [5, 10, 20, 40],
    "subsample": [0.7, 1.0],
}
DF_GRID = [2, 3, 4, 5, 6, 7, 8, 10]
TREE_DEPTHS = [1, 2, 3]
TREE_MIN_LEAVES = [50, 100, 200]


def _splits(settings, n_datasets, n, test_fraction, seed):
    """``n_datasets`` simulated draws cycling through ``settings``."""
    out = []
    for i in range(n_datasets):
        st = settings[i % len(settings)]
        ss = np.random.SeedSequence(seed, spawn_key=(i,)).spawn(3)
        x, z = gen_predictors(st, n, ss[0])
        y = gen_response(st, x, z, ss[1])
        perm = np.random.default_rng(ss[2]).permutation(n)
        cut = int(round(n * (1 - test_fraction)))
        out.append((st, x, z, y, perm[:cut], perm[cut:]))
    return out


def sample_specs(n_candidates: int, seed: int) -> list[GBTSpec]:
    rng = np.random.default_rng(seed)
    specs = [GBTSpec()]
    while len(specs) < n_candidates:
        kw = {k: v[rng.integers(len(v))] for k, v in SEARCH_SPACE.items()}
        specs.append(GBTSpec(**{k: type(getattr(GBTSpec(), k))(v) for k, v in kw.items()}))
    return specs


def tune_gbt(problems, n_candidates: int, seed: int):
    """Best spec for a list of ``(features, target, train_idx, test_idx)`` problems."""
    scores = []
    specs = sample_specs(n_candidates, seed)
    for spec in specs:
        err = 0.0
        for i, (feat, target, tr, te) in enumerate(problems):
            model = fit_gbt(spec.replace(seed=seed + i), feat[tr], target[tr])
            err += float(np.mean((target[te] - model.predict(feat[te])) ** 2))
        scores.append(err / len(problems))
    best = int(np.argmin(scores))
    return specs[best], [(s, e) for s, e in zip(specs, scores)]


def score_matching_loss(rho, x, location, scale) -> float:
    """Held-out ``mean(rho^2 + 2 d rho / dx)`` of a location-scale score."""
    eps = (x - location) / scale
    return float(np.mean((rho(eps) / scale) ** 2 + 2 * rho.derivative(eps) / scale**2))


def tune_score(problems, df_grid=DF_GRID, depths=TREE_DEPTHS, min_leaves=TREE_MIN_LEAVES,
               floor_fraction: float = ScoreSpec().floor_fraction):
    """Joint choice of variance-tree complexity and spline df.

    ``problems`` holds ``(z, x, m_train, m_test, train_idx, test_idx)`` with
    the fitted location evaluated on both parts.
    """
    results = []
    for depth in depths:
        for leaf in min_leaves:
            losses = np.zeros(len(df_grid))
            for z, x, m_tr, m_te, tr, te in problems:
                r = x[tr] - m_tr
                tree = fit_variance_tree(z[tr], r**2, leaf,
                                         floor_fraction * float(np.std(x[tr])), depth)
                s_tr, s_te = tree.predict(z[tr]), tree.predict(z[te])
                for i, df in enumerate(df_grid):
                    rho = fit_spline_score(r / s_tr, df)
                    losses[i] += score_matching_loss(rho, x[te], m_te, s_te)
            losses /= len(problems)
            results += [((depth, leaf, float(df)), loss) for df, loss in zip(df_grid, losses)]
    best = min(results, key=lambda t: t[1])
    return best[0], results


def tune_basis_lambda(problems, seed: int = 0) -> tuple[float, list[float]]:
    """Median of per-dataset five-fold CV choices on the default lasso grid."""
    chosen = [lasso_cv(b[tr], x[tr], seed=seed + i)[0] for i, (b, x, tr, _) in enumerate(problems)]
    return float(np.median(chosen)), chosen


def tune(settings: list[SimSetting] | None = None, n_datasets: int = 30,
         n_candidates: int = 30, n: int = 1000, seed: int = 0,
         test_fraction: float = 0.2, log=None) -> dict:
    """Return a config mapping accepted by ``EstimatorConfig.from_dict``.

    Training splits have ``(1 - test_fraction) * n`` rows, matching the
    out-of-fold sample size of five-fold cross-fitting at size ``n``.
    """
    settings = settings or all_settings(n)
    log = log or (lambda msg: None)
    splits = _splits(settings, n_datasets, n, test_fraction, seed)

    reg_problems = [(np.column_stack([x, z]), y, tr, te) for _, x, z, y, tr, te in splits]
    reg_spec, _ = tune_gbt(reg_problems, n_candidates, seed)
    log(f"regression: {reg_spec}")

    loc_problems = [(z, x, tr, te) for _, x, z, y, tr, te in splits]
    loc_spec, _ = tune_gbt(loc_problems, n_candidates, seed + 1)
    log(f"location: {loc_spec}")

    plr_problems = []
    for st, x, z, y, tr, te in splits:
        theta, _ = reference_truth(st)
        plr_problems.append((z, y - theta * x, tr, te))
    plr_spec, _ = tune_gbt(plr_problems, n_candidates, seed + 2)
    log(f"plr outcome: {plr_spec}")

    score_problems = []
    for i, (_, x, z, y, tr, te) in enumerate(splits):
        m = fit_gbt(loc_spec.replace(seed=seed + i), z[tr], x[tr])
        score_problems.append((z, x, m.predict(z[tr]), m.predict(z[te]), tr, te))
    (depth, leaf, df), _ = tune_score(score_problems)
    log(f"variance tree: depth {depth}, min leaf {leaf}; spline df: {df}")

    basis_problems = [(quadratic_basis(x, z), x, tr, te) for _, x, z, y, tr, te in splits]
    lam, _ = tune_basis_lambda(basis_problems, seed)
    log(f"basis lambda: {lam}")

    def spec_dict(s: GBTSpec) -> dict:
        return {k: getattr(s, k) for k in ("rounds", "learning_rate", "max_depth",
                                           "min_leaf", "subsample")}

    return {
        "regression": spec_dict(reg_spec),
        "plr_outcome": spec_dict(plr_spec),
        "score": {"df": df, "tree_depth": depth, "tree_min_leaf": leaf,
                  "location": spec_dict(loc_spec)},
        "basis_lambda": lam,
    }
