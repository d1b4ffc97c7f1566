import json
from importlib import resources

import pytest

from drape.cli import main

DEMO = str(resources.files("drape").joinpath("data/demo_plm.csv"))
XCOLS = "x"


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.json"
    path.write_text(json.dumps({
        "regression": {"rounds": 40, "learning_rate": 0.15, "max_depth": 3, "subsample": 1.0},
        "score": {"location": {"rounds": 40, "learning_rate": 0.15, "max_depth": 1}},
    }))
    return str(path)


def test_estimate_drape_on_demo(tmp_path, fast_config, capsys):
    out = tmp_path / "est.json"
    code = main(["estimate", DEMO, "--x", XCOLS, "--y", "y", "--method", "drape",
                 "--config", fast_config, "--threads", "1", "--out", str(out)])
    assert code == 0
    est = json.loads(out.read_text())
    assert est["method"] == "drape" and est["sigma"][0][0] > 0
    assert all(abs(v) < 1e6 for v in est["theta"])
    assert "95% CI" in capsys.readouterr().out


def test_estimate_ols_bitwise(tmp_path):
    outs = []
    for i in range(2):
        out = tmp_path / f"o{i}.json"
        assert main(["estimate", DEMO, "--x", XCOLS, "--y", "y", "--method", "ols",
                     "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_missing_y_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["estimate", DEMO, "--x", XCOLS])
    assert exc.value.code == 2


def test_bad_column_exits_one(capsys):
    assert main(["estimate", DEMO, "--x", "nope", "--y", "y", "--method", "ols"]) == 1
    assert "nope" in capsys.readouterr().err


def test_simulate_smoke_and_determinism(tmp_path, fast_config):
    runs = []
    for i in range(2):
        out = tmp_path / f"sim{i}.csv"
        code = main(["simulate", "--setting", "plm", "--noise", "normal", "--method", "drape",
                     "--repeats", "3", "--n", "200", "--seed", "5", "--threads", "1",
                     "--config", fast_config, "--out", str(out)])
        assert code == 0
        runs.append([out.read_bytes(), out.with_suffix(".json").read_bytes(),
                     out.with_suffix(".svg").read_bytes()])
    assert runs[0] == runs[1]
    summary = json.loads((tmp_path / "sim0.json").read_text())
    assert 0 <= summary["coverage"] <= 1 and summary["repeats"] == 3
    assert summary["seed"] == 5 and len(summary["config_digest"]) == 16


def test_simulate_thread_count_does_not_matter(tmp_path):
    outs = []
    for threads in ("1", "2"):
        out = tmp_path / f"t{threads}.csv"
        assert main(["simulate", "--setting", "add", "--method", "ols", "--repeats", "4",
                     "--n", "200", "--threads", threads, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_simulate_rejects_zero_repeats(tmp_path):
    assert main(["simulate", "--setting", "plm", "--repeats", "0",
                 "--out", str(tmp_path / "x.csv")]) == 2


def test_simulate_unknown_setting():
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--setting", "cubic", "--out", "x.csv"])
    assert exc.value.code == 2


def test_verify_suites(capsys):
    assert main(["verify", "--suite", "grid"]) == 0
    assert main(["verify", "--suite", "thm3"]) == 0
    assert "all" in capsys.readouterr().out
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "bogus"])
    assert exc.value.code == 2


def test_mse_and_plot(tmp_path, fast_config):
    out = tmp_path / "mse.csv"
    args = ["mse", "--setting", "int", "--repeats", "2", "--n-train", "300", "--n-test", "200",
            "--threads", "1", "--config", fast_config, "--out", str(out)]
    assert main(args) == 0
    first = [out.read_bytes(), out.with_suffix(".json").read_bytes(),
             out.with_suffix(".svg").read_bytes()]
    assert main(args) == 0
    assert first == [out.read_bytes(), out.with_suffix(".json").read_bytes(),
                     out.with_suffix(".svg").read_bytes()]
    summary = json.loads(out.with_suffix(".json").read_text())
    assert summary["repeats"] == 2 and "score_spline" in summary["mean"]

    sim = tmp_path / "s.csv"
    assert main(["simulate", "--setting", "plm", "--method", "ols", "--repeats", "3",
                 "--n", "200", "--out", str(sim)]) == 0
    fig = tmp_path / "strips.svg"
    assert main(["plot", str(sim.with_suffix(".json")), str(sim.with_suffix(".json")),
                 "--out", str(fig)]) == 0
    text = fig.read_text()
    assert text.startswith("<?xml") and "<svg" in text
    again = tmp_path / "again.svg"
    main(["plot", str(sim.with_suffix(".json")), str(sim.with_suffix(".json")),
          "--out", str(again)])
    assert again.read_bytes() == fig.read_bytes()


def test_flags_override_config(tmp_path, fast_config):
    out = tmp_path / "e.json"
    assert main(["estimate", DEMO, "--x", XCOLS, "--y", "y", "--method", "ols",
                 "--config", fast_config, "--folds", "4", "--out", str(out)]) == 0
    from drape.cli import build_parser, effective_config
    args = build_parser().parse_args(["estimate", DEMO, "--x", "x", "--y", "y",
                                      "--config", fast_config, "--spline-df", "3",
                                      "--tol", "1"])
    cfg = effective_config(args)
    assert cfg.score.df == 3 and cfg.tol == 1.0 and cfg.regression.rounds == 40
