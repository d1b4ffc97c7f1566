"""Desk-scale acceptance suite.

Each test checks one acceptance criterion at its stated tolerance and logs a
single ``criterion N: PASS|FAIL`` line, collected in the terminal summary.
Criteria 1 and 2 share one sweep of 200 repeats per cell; the sweep uses
``$DRAPE_THREADS`` (default: all cores) worker processes.
"""

import time

import numpy as np
import pytest

from drape.cli import main
from drape.config import EstimatorConfig
from drape.resmooth import choose_bandwidth, default_bandwidths
from drape.score import fit_spline_score
from drape.simharness import (
    NOISES,
    RESPONSES,
    SimSetting,
    mse_table,
    resolve_threads,
    run_coverage,
)
from drape.verify import run_suite

REPEATS = 200
N = 1000
SEED = 0


def report(log, k, ok, detail):
    log(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def config():
    return EstimatorConfig()


@pytest.fixture(scope="session")
def threads():
    return resolve_threads(None)


@pytest.fixture(scope="session")
def drape_sweep(config, threads):
    start = time.perf_counter()
    reports = {
        (r, e): run_coverage(SimSetting(r, e, N), "drape", REPEATS, SEED, config, threads)
        for r in RESPONSES for e in NOISES
    }
    return reports, time.perf_counter() - start


def test_criterion_1_coverage(drape_sweep, acceptance_log, threads):
    reports, elapsed = drape_sweep
    cov = {k: rep.coverage for k, rep in reports.items()}
    worst = min(cov, key=cov.get)
    mean = float(np.mean(list(cov.values())))
    for (r, e), c in cov.items():
        print(f"  {r}/{e}: coverage {c:.3f}")
    ok = min(cov.values()) >= 0.85 and mean >= 0.90
    report(acceptance_log, 1, ok,
           f"min coverage {cov[worst]:.3f} ({worst[0]}/{worst[1]}) >= 0.85, "
           f"mean {mean:.3f} >= 0.90 [{len(cov)} cells x {REPEATS}, "
           f"{elapsed / 60:.1f} min on {threads} worker(s)]")
    assert ok


def test_criterion_2_unbiased(drape_sweep, acceptance_log):
    rep = drape_sweep[0][("plm", "normal")]
    bias = rep.mean_theta - 1.0
    ok = abs(bias) <= 0.05
    report(acceptance_log, 2, ok, f"plm/normal mean theta {rep.mean_theta:.4f}, "
                                  f"|bias| {abs(bias):.4f} <= 0.05")
    assert ok


def test_criterion_3_plr_loses_coverage(config, threads, acceptance_log):
    rep = run_coverage(SimSetting("int", "normal", N), "plr", REPEATS, SEED, config, threads)
    ok = rep.coverage <= 0.50
    report(acceptance_log, 3, ok, f"int/normal plr coverage {rep.coverage:.3f} <= 0.50 "
                                  f"(mean theta {rep.mean_theta:.3f}, truth {rep.truth:.3f})")
    assert ok


def test_criterion_4_ols_undercovers(config, threads, acceptance_log):
    rep = run_coverage(SimSetting("add", "normal", N), "ols", REPEATS, SEED, config, threads)
    ok = rep.coverage <= 0.80
    report(acceptance_log, 4, ok, f"add/normal ols coverage {rep.coverage:.3f} <= 0.80")
    assert ok


@pytest.fixture(scope="session")
def mse_rows(config, threads):
    out = {}
    for response in ("plm", "int"):
        start = time.perf_counter()
        rows = mse_table(SimSetting(response, "normal"), 20, 800, 1000, SEED, config, threads)
        out[response] = (rows, time.perf_counter() - start)
    return out


def test_criterion_5_score_mse(mse_rows, acceptance_log):
    rows, elapsed = mse_rows["plm"]
    spline = np.array([r["score_spline"] for r in rows])
    basis = np.array([r["score_basis"] for r in rows])
    wins = int(np.sum(spline < basis))
    ok = 0.05 <= spline.mean() <= 0.35 and wins >= 16 and elapsed <= 300
    report(acceptance_log, 5, ok,
           f"spline MSE mean {spline.mean():.3f} in [0.05, 0.35] (basis {basis.mean():.3f}); "
           f"spline < basis in {wins}/20 >= 16; {elapsed:.0f}s <= 300s")
    assert ok


def test_criterion_6_derivative_mse(mse_rows, acceptance_log):
    rows, _ = mse_rows["int"]
    smooth = np.array([r["deriv_resmooth"] for r in rows])
    diff = np.array([r["deriv_difference"] for r in rows])
    wins = int(np.sum(smooth < diff))
    ok = wins >= 16
    report(acceptance_log, 6, ok,
           f"int/normal resmoothing MSE {smooth.mean():.3f} vs difference {diff.mean():.3f}; "
           f"resmoothing wins {wins}/20 >= 16")
    assert ok


def test_criterion_7_verification(acceptance_log):
    start = time.perf_counter()
    results = run_suite("all")
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed and not r.informational]
    ok = not failed and elapsed <= 60
    for r in results:
        print(" ", r.line())
    report(acceptance_log, 7, ok, f"{len(results)} checks, failures {failed or 'none'}; "
                                  f"{elapsed:.1f}s <= 60s")
    assert ok


def test_criterion_8_forced_bandwidth_branches(acceptance_log):
    H = default_bandwidths(1.0)
    rng = np.random.default_rng(0)
    same = np.tile(rng.exponential(size=(100, 1)), (1, H.size + 1))
    a = choose_bandwidth(same, H, tol=2.0)
    rising = rng.exponential(size=(100, 1)) + 0.01 * np.arange(H.size + 1)
    b = choose_bandwidth(rising, H, tol=0.0)
    ok = a.chosen == H.max() and b.h_min == 0.0 and b.fallback and b.chosen == H.min()
    report(acceptance_log, 8, ok, f"identical errors -> {a.chosen:.4g} (max H {H.max():.4g}); "
                                  f"rising CV, tol 0 -> {b.chosen:.4g} (min H {H.min():.4g})")
    assert ok


def test_criterion_9_spline_linear_limit(acceptance_log):
    e = np.random.default_rng(1).gamma(2.0, size=1000)
    # independent solution of min_{a,b} mean((a + b e)^2 + 2 b)
    ebar = e.mean()
    s2 = np.mean((e - ebar) ** 2)
    closed = np.array([ebar / s2, -1.0 / s2])
    gaps = []
    for df in (2.0, 2.0 + 1e-9):  # exact limit and a penalty of order 1e8
        model = fit_spline_score(e, df)
        gaps.append(max(np.max(np.abs(model.coef[:2] - closed)),
                        np.max(np.abs(model.coef[2:]), initial=0.0)))
    ok = max(gaps) <= 1e-6
    report(acceptance_log, 9, ok, f"max coefficient gap {max(gaps):.2e} <= 1e-6")
    assert ok


def _bytes(paths):
    return [p.read_bytes() for p in paths]


def test_criterion_10_determinism(tmp_path, capsys, acceptance_log):
    from importlib import resources
    demo = str(resources.files("drape").joinpath("data/demo_plm.csv"))
    commands = {
        "estimate": (["estimate", demo, "--x", "x", "--y", "y", "--method", "drape",
                      "--seed", "3", "--out", "{d}/est.json"], ["est.json"]),
        "simulate": (["simulate", "--setting", "int", "--noise", "mix3", "--repeats", "4",
                      "--n", "300", "--seed", "3", "--out", "{d}/sim.csv"],
                     ["sim.csv", "sim.json", "sim.svg"]),
        "mse": (["mse", "--setting", "add", "--repeats", "2", "--n-train", "400",
                 "--n-test", "300", "--seed", "3", "--out", "{d}/mse.csv"],
                ["mse.csv", "mse.json", "mse.svg"]),
        "plot": (["plot", "{d}/sim.json", "--out", "{d}/strips.svg"], ["strips.svg"]),
        "tune": (["tune", "--datasets", "2", "--candidates", "2", "--n", "300",
                  "--seed", "3", "--out", "{d}/tuned.json"], ["tuned.json"]),
        "verify": (["verify", "--suite", "grid"], []),
    }
    outputs = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        for name, (argv, files) in commands.items():
            if name == "plot":
                (d / "sim.json").write_bytes((tmp_path / "a" / "sim.json").read_bytes())
            capsys.readouterr()
            code = main([a.format(d=d) for a in argv])
            stdout = capsys.readouterr().out.replace(str(d), "<dir>")
            outputs.setdefault(name, []).append((code, stdout, _bytes([d / f for f in files])))
    differing = [k for k, (a, b) in outputs.items() if a != b]
    failed = [k for k, runs in outputs.items() if runs[0][0] != 0]
    ok = not differing and not failed
    report(acceptance_log, 10, ok, f"{len(commands)} commands run twice; "
                                   f"differing outputs: {differing or 'none'}; "
                                   f"nonzero exits: {failed or 'none'}")
    assert ok
