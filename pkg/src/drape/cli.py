"""``drape`` command-line interface.

Exit codes: 0 success, 1 estimation or check failure, 2 usage error.
Configuration precedence is flags, then ``--config`` file, then the frozen
tuned defaults; the digest of the effective configuration is written into
every output.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import EstimatorConfig, load_config
from .data import DataError, load_csv, make_folds
from .distributions import FAMILIES
from .estimator import METHODS, estimate
from .simharness import (
    RESPONSES,
    SIM_METHODS,
    CoverageReport,
    SimSetting,
    mse_table,
    resolve_threads,
    run_coverage,
)
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("alpha must lie in (0, 1)")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding the tuned defaults")
    common.add_argument("--threads", type=_positive_int,
                        help="worker processes (default: $DRAPE_THREADS or all cores)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--folds", type=_positive_int, help="cross-fitting folds K")
    common.add_argument("--tol", type=float, help="bandwidth selection tolerance")
    common.add_argument("--spline-df", type=float, help="spline score degrees of freedom")
    common.add_argument("--basis-lambda", type=float, help="lasso penalty of the basis score")

    p = argparse.ArgumentParser(prog="drape", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", parents=[common], help="estimate the APE from a CSV file")
    e.add_argument("csv")
    e.add_argument("--x", required=True, help="exposure column(s), comma separated")
    e.add_argument("--y", required=True, help="response column")
    e.add_argument("--method", choices=METHODS, default="drape")
    e.add_argument("--alpha", type=_alpha, default=0.05)
    e.add_argument("--out", help="write the estimate as JSON here")

    s = sub.add_parser("simulate", parents=[common], help="coverage experiment")
    s.add_argument("--setting", choices=RESPONSES, required=True)
    s.add_argument("--noise", choices=tuple(FAMILIES), default="normal")
    s.add_argument("--predictors-csv", help="draw (x, z) from this file instead")
    s.add_argument("--x-col", help="exposure column of --predictors-csv")
    s.add_argument("--method", choices=SIM_METHODS, default="drape")
    s.add_argument("--repeats", type=int, default=200)
    s.add_argument("--n", type=_positive_int, default=1000)
    s.add_argument("--alpha", type=_alpha, default=0.05)
    s.add_argument("--out", required=True,
                   help="per-repeat CSV; a .json summary and .svg figure are written beside it")

    v = sub.add_parser("verify", help="numerical checks of the underlying identities")
    v.add_argument("--suite", choices=SUITES, default="all")

    t = sub.add_parser("tune", parents=[common], help="pre-tune nuisance hyperparameters")
    t.add_argument("--datasets", type=_positive_int, default=30)
    t.add_argument("--candidates", type=_positive_int, default=40)
    t.add_argument("--n", type=_positive_int, default=1000)
    t.add_argument("--out", required=True, help="config JSON to write")

    m = sub.add_parser("mse", parents=[common], help="out-of-sample nuisance errors")
    m.add_argument("--setting", choices=RESPONSES, default="plm")
    m.add_argument("--noise", choices=tuple(FAMILIES), default="normal")
    m.add_argument("--repeats", type=int, default=20)
    m.add_argument("--n-train", type=_positive_int, default=800)
    m.add_argument("--n-test", type=_positive_int, default=1000)
    m.add_argument("--out", required=True,
                   help="per-repeat CSV; a .json summary and .svg figure are written beside it")

    pl = sub.add_parser("plot", help="render coverage strips from simulate JSON outputs")
    pl.add_argument("reports", nargs="+", help="JSON files written by simulate")
    pl.add_argument("--out", required=True, help="SVG file")
    return p


def effective_config(args) -> EstimatorConfig:
    data = load_config(args.config) if getattr(args, "config", None) else {}
    flags = {
        "folds": getattr(args, "folds", None),
        "tol": getattr(args, "tol", None),
        "basis_lambda": getattr(args, "basis_lambda", None),
    }
    data.update({k: v for k, v in flags.items() if v is not None})
    if getattr(args, "spline_df", None) is not None:
        data["score"] = {**data.get("score", {}), "df": args.spline_df}
    return EstimatorConfig.from_dict(data)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_estimate(args) -> int:
    config = effective_config(args)
    x_cols = [c.strip() for c in args.x.split(",") if c.strip()]
    ds = load_csv(args.csv, x_cols, args.y)
    folds = make_folds(ds.n, config.folds, args.seed)
    est = estimate(args.method, ds, folds, config, args.alpha, args.seed)
    if not np.all(np.isfinite(est.theta)) or not np.all(np.isfinite(est.sigma)):
        print("error: estimate is not finite", file=sys.stderr)
        return EXIT_FAIL
    for name, th, (lo, hi) in zip(ds.x_names, est.theta, est.ci):
        print(f"{name}: {th:.6g}  [{lo:.6g}, {hi:.6g}]  ({100 * (1 - args.alpha):g}% CI)")
    if args.out:
        _write_json(Path(args.out), est.to_dict())
    return EXIT_OK


def _sidecars(out: str) -> tuple[Path, Path, Path]:
    path = Path(out)
    return path, path.with_suffix(".json"), path.with_suffix(".svg")


def cmd_simulate(args) -> int:
    from .plotting import coverage_strips

    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    config = effective_config(args)
    setting = SimSetting(args.setting, args.noise, args.n,
                         predictors_csv=args.predictors_csv, x_col=args.x_col)
    report = run_coverage(setting, args.method, args.repeats, args.seed, config,
                          resolve_threads(args.threads), args.alpha)
    csv_path, json_path, svg_path = _sidecars(args.out)
    report.write_csv(csv_path)
    json_path.write_text(report.to_json() + "\n")
    coverage_strips([report], svg_path)
    print(f"{setting.label} {args.method}: coverage {report.coverage:.3f} over "
          f"{report.repeats} repeats, mean theta {report.mean_theta:.4f}, "
          f"truth {report.truth:.4f}, median width {report.median_width:.4f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_suite(args.suite)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed and not r.informational]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_tune(args) -> int:
    from .tuning import tune

    cfg = tune(n_datasets=args.datasets, n_candidates=args.candidates, n=args.n,
               seed=args.seed, log=lambda msg: print(msg, flush=True))
    _write_json(Path(args.out), cfg)
    print(f"wrote {args.out} (digest {EstimatorConfig.from_dict(cfg).digest()})")
    return EXIT_OK


def cmd_mse(args) -> int:
    from .plotting import mse_boxes

    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    config = effective_config(args)
    setting = SimSetting(args.setting, args.noise)
    rows = mse_table(setting, args.repeats, args.n_train, args.n_test, args.seed, config,
                     resolve_threads(args.threads))
    csv_path, json_path, svg_path = _sidecars(args.out)
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    keys = [k for k in rows[0] if k not in ("repeat", "seed")]
    summary = {
        "setting": setting.label, "repeats": len(rows), "seed": args.seed,
        "config_digest": config.digest(),
        "mean": {k: float(np.mean([r[k] for r in rows])) for k in keys},
        "se": {k: float(np.std([r[k] for r in rows], ddof=1) / np.sqrt(len(rows)))
               if len(rows) > 1 else float("nan") for k in keys},
        "rows": rows,
    }
    _write_json(json_path, summary)
    mse_boxes(rows, svg_path)
    for k in keys:
        print(f"{k:18} {summary['mean'][k]:.4f}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plotting import coverage_strips

    reports = []
    for path in args.reports:
        d = json.loads(Path(path).read_text())
        reports.append(CoverageReport(d["setting"], d["noise"], d["method"], d["seed"],
                                      d["truth"], d["truth_se"], d["records"],
                                      d.get("config_digest", "")))
    coverage_strips(reports, args.out)
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "tune": cmd_tune,
    "mse": cmd_mse,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"drape {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError, np.linalg.LinAlgError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
