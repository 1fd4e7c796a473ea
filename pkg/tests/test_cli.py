from __future__ import annotations

import json

import numpy as np
import pytest

from alphaevo import cli, data_io, eval_engine
from alphaevo.alpha_dsl import parse

from conftest import panel_from_close


@pytest.fixture
def data_file(tmp_path):
    panel = data_io.synthetic_panel(41, 12, 160)
    path = tmp_path / "panel.csv"
    data_io.save_panel(panel, str(path))
    return str(path)


@pytest.fixture
def config_file(tmp_path):
    cfg = {
        "evolution": {"population_size": 4, "evaluation_budget": 20, "seed": 3},
        "gp": {"population_size": 8, "evaluation_budget": 40, "seed": 3},
        "backend": {"kind": "mock"},
        "backtest": {"top_k": 4, "drop_m": 1},
        "split": {
            "train": ["2020-01-02", "2020-05-01"],
            "validation": ["2020-05-01", "2020-06-15"],
            "test": ["2020-06-15", "2020-08-15"],
            "context_days": 15,
        },
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def test_eval_matches_library_call(data_file, capsys):
    status = cli.main(["eval", "--expr", "ts_mean(close, 5)", "--data", data_file])
    assert status == 0
    record = json.loads(capsys.readouterr().out)
    panel = data_io.load_panel(data_file)
    report = eval_engine.fitness(parse("ts_mean(close, 5)"), panel, 5)
    assert record["ic"] == report.ic
    assert record["rank_ic"] == report.rank_ic
    assert record["valid_day_count"] == report.valid_day_count


def test_eval_malformed_expression_fails(data_file, capsys):
    status = cli.main(["eval", "--expr", "ts_mean(close close)", "--data", data_file])
    assert status == cli.EXIT_CONFIG
    assert "offset" in capsys.readouterr().err


def test_eval_split_selection(data_file, config_file, capsys):
    status = cli.main([
        "eval", "--expr", "close", "--data", data_file,
        "--config", config_file, "--split", "valid",
    ])
    assert status == 0
    record = json.loads(capsys.readouterr().out)
    assert record["split"] == "valid"


def test_mine_outputs_and_rerun_identical(tmp_path, data_file, config_file, capsys):
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    assert cli.main([
        "mine", "--config", config_file, "--data", data_file, "--out", str(out1),
    ]) == 0
    assert cli.main([
        "mine", "--config", config_file, "--data", data_file, "--out", str(out2),
    ]) == 0
    capsys.readouterr()
    for name in (
        "manifest.json", "run_log.jsonl", "convergence.csv", "convergence.svg",
        "best_expression.txt", "fitness_train.json", "fitness_validation.json",
        "fitness_test.json",
    ):
        assert (out1 / name).exists(), name
    assert (out1 / "best_expression.txt").read_bytes() == (out2 / "best_expression.txt").read_bytes()
    assert (out1 / "run_log.jsonl").read_bytes() == (out2 / "run_log.jsonl").read_bytes()
    manifest = json.loads((out1 / "manifest.json").read_text())
    assert manifest["data"]["sha256"]
    assert manifest["config"]["evolution"]["evaluation_budget"] == 20


def test_mine_missing_credential_fails_cleanly(tmp_path, data_file, config_file, monkeypatch, capsys):
    monkeypatch.delenv("ALPHAEVO_API_KEY", raising=False)
    cfg = json.loads(open(config_file).read())
    cfg["backend"] = {"kind": "remote", "endpoint": "http://127.0.0.1:9/v1/x", "model": "m"}
    cfg_path = tmp_path / "remote.json"
    cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
    out = tmp_path / "never"
    status = cli.main(["mine", "--config", str(cfg_path), "--data", data_file, "--out", str(out)])
    assert status == cli.EXIT_BACKEND
    assert "credential" in capsys.readouterr().err
    # failure precedes any evaluation: the preserved log has no evaluation records
    records = [json.loads(l) for l in (out / "run_log.jsonl").read_text().splitlines() if l]
    assert all(r["kind"] != "evaluation" for r in records)


def test_mine_backend_override_flag(tmp_path, data_file, config_file):
    out = tmp_path / "forced_mock"
    status = cli.main([
        "mine", "--config", config_file, "--data", data_file,
        "--out", str(out), "--backend", "mock",
    ])
    assert status == 0


def test_gp_deterministic_outputs(tmp_path, data_file, config_file, capsys):
    out1, out2 = tmp_path / "gp1", tmp_path / "gp2"
    assert cli.main(["gp", "--config", config_file, "--data", data_file, "--out", str(out1)]) == 0
    assert cli.main(["gp", "--config", config_file, "--data", data_file, "--out", str(out2)]) == 0
    capsys.readouterr()
    assert (out1 / "best_expression.txt").read_bytes() == (out2 / "best_expression.txt").read_bytes()
    assert (out1 / "convergence.csv").read_bytes() == (out2 / "convergence.csv").read_bytes()


def test_backtest_single_dominant_stock(tmp_path, capsys):
    # one stock's close dwarfs the rest, so `close` always ranks it first
    close = np.array([
        [1000.0, 1100.0, 1050.0, 1155.0, 1270.5],
        [10.0, 10.0, 10.0, 10.0, 10.0],
        [12.0, 11.0, 13.0, 12.0, 11.0],
    ])
    panel = panel_from_close(close, tickers=("BIG", "AAA", "BBB"))
    data_path = tmp_path / "dom.csv"
    data_io.save_panel(panel, str(data_path))
    cfg_path = tmp_path / "bt.json"
    cfg_path.write_text(json.dumps({"backtest": {"top_k": 1, "drop_m": 1}}), encoding="utf-8")
    out = tmp_path / "bt"
    status = cli.main([
        "backtest", "--expr", "close", "--data", str(data_path),
        "--out", str(out), "--config", str(cfg_path),
    ])
    assert status == 0
    lines = (out / "equity.csv").read_text().splitlines()
    terminal = float(lines[-1].split(",")[1])
    assert terminal == pytest.approx(1270.5 / 1000.0 - 1.0, abs=1e-12)
    assert (out / "equity.svg").exists()


def test_backtest_expr_file(tmp_path, data_file, config_file):
    expr_file = tmp_path / "expr.txt"
    expr_file.write_text("cs_rank(volume)\n", encoding="utf-8")
    out = tmp_path / "bt2"
    status = cli.main([
        "backtest", "--expr-file", str(expr_file), "--data", data_file,
        "--out", str(out), "--config", config_file, "--split", "test",
    ])
    assert status == 0


def test_report_overlays_two_runs(tmp_path, data_file, config_file, capsys):
    out1, out2 = tmp_path / "m1", tmp_path / "m2"
    cli.main(["mine", "--config", config_file, "--data", data_file, "--out", str(out1)])
    cli.main(["mine", "--config", config_file, "--data", data_file, "--out", str(out2),
              "--seed", "11"])
    capsys.readouterr()
    report_dir = tmp_path / "report"
    status = cli.main([
        "report", str(out1 / "run_log.jsonl"), str(out2 / "run_log.jsonl"),
        "--labels", "semantic,ablation", "--out", str(report_dir),
    ])
    assert status == 0
    svg = (report_dir / "report.svg").read_text()
    assert "semantic" in svg and "ablation" in svg
    table = (report_dir / "report.csv").read_text().splitlines()
    labels = {line.split(",")[0] for line in table[1:]}
    assert labels == {"semantic", "ablation"}


def test_report_corrupt_log(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"kind": "meta"}\nnot json at all\n', encoding="utf-8")
    status = cli.main(["report", str(bad), "--out", str(tmp_path / "r")])
    assert status == cli.EXIT_DATA
    assert ":2" in capsys.readouterr().err


def test_data_error_exit_code(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    status = cli.main(["eval", "--expr", "close", "--data", str(missing)])
    assert status == cli.EXIT_DATA


def test_config_error_exit_code(tmp_path, data_file, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"evolution": {"population_sizes": 4}}', encoding="utf-8")
    status = cli.main(["mine", "--config", str(cfg), "--data", data_file,
                       "--out", str(tmp_path / "x")])
    assert status == cli.EXIT_CONFIG
    assert "unknown keys" in capsys.readouterr().err
