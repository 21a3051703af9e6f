import json

import pytest

from soielab.cli import main, read_surface_csv
from soielab.experiments import read_grid_csv

SMALL = {"duration_s": 3.0, "noise": {"biases_deg": [0, 3, 6]}, "pso": {"particles": 6, "iterations": 3}}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_malformed_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 1,\n "dt_s": }')
    assert run("--config", bad, "optimize", "--own-bias", 1) == 2
    assert "line 2" in capsys.readouterr().err


def test_unknown_key_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"noise": {"bias_deg": [0]}}))
    assert run("--config", bad, "optimize") == 2
    assert "noise.bias_deg" in capsys.readouterr().err


def test_bad_jobs_exits_2():
    assert run("--jobs", 0, "optimize", "--own-bias", 1) == 2


def test_single_condition(capsys):
    assert run("optimize", "--own-bias", 0, "--partner-bias", 6) == 0
    assert "lambda* =" in capsys.readouterr().out


def test_grid_without_surface_exits_3(tmp_path):
    assert run("--out-dir", tmp_path, "grid") == 3


def test_report_on_empty_dir_exits_3(tmp_path):
    assert run("report", tmp_path) == 3


def test_fit_with_missing_condition_exits_2(tmp_path):
    targets = tmp_path / "t.csv"
    targets.write_text("condition,error_deg,cocontraction\nSS,2.5,0.2\n")
    assert run("--out-dir", tmp_path, "fit", targets) == 2


def test_fit_missing_file_exits_3(tmp_path):
    assert run("--out-dir", tmp_path, "fit", tmp_path / "absent.csv") == 3


def test_optimize_grid_report(tmp_path, small_config, capsys):
    out = tmp_path / "res"
    assert run("--config", small_config, "--out-dir", out, "optimize") == 0
    assert read_surface_csv(out / "surface.csv").shape == (3, 3)
    assert run("--config", small_config, "--out-dir", out, "grid", "--trials-per-cell", 2) == 0
    text = (out / "grid.csv").read_text()
    assert text.startswith("# manifest_hash: ")
    assert len(read_grid_csv(out / "grid.csv")) == 9 * 3 * 2
    capsys.readouterr()
    assert run("report", out) == 0
    report = capsys.readouterr().out
    assert "SOIE" in report
    assert "[PASS]" in report or "[FAIL]" in report


def test_fit_is_deterministic(tmp_path, small_config):
    targets = tmp_path.parent / "targets.csv"
    targets.write_text("condition,error_deg,cocontraction\nSS,2.56,0.19\nSN,3.0,0.47\nNS,2.76,0.06\nNN,3.67,0.24\n")
    docs = []
    for name in ("a", "b"):
        assert run("--config", small_config, "--out-dir", tmp_path / name, "fit", targets) == 0
        docs.append((tmp_path / name / "fitted.json").read_text())
    assert docs[0] == docs[1]
    assert set(json.loads(docs[0])) == {"manifest_hash", "sharp_bias_deg", "noisy_bias_deg", "effort_weight_per_s2"}


@pytest.mark.parametrize("study", ["trial", "human-human"])
def test_simulate_studies(tmp_path, study):
    assert run("--out-dir", tmp_path, "--dt", 0.01, "simulate", "--study", study) == 0
    assert any(tmp_path.glob("*.csv"))
