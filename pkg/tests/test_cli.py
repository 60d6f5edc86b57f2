import csv
import json
from pathlib import Path

import numpy as np
import pytest

from plastopt.cli import EXIT_CONFIG, EXIT_OK, main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_verify_uniaxial(tmp_path):
    assert main(["verify-uniaxial", "--out-dir", str(tmp_path)]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "uniaxial.csv")))
    assert len(rows) == 120
    assert {r["branch"] for r in rows} == {"elastic", "yield+", "yield-"}
    report = json.load(open(tmp_path / "uniaxial_report.json"))
    assert report["passed"] and all(v <= 1e-8 for v in report["errors_2norm"].values())
    assert (tmp_path / "uniaxial.png").stat().st_size > 0


def test_analyze_stretch(tmp_path, capsys):
    assert main(["analyze", "--config", str(CONFIGS / "stretch.toml"), "--out-dir", str(tmp_path)]) == EXIT_OK
    table = np.loadtxt(tmp_path / "response.csv", delimiter=",", skiprows=1)
    assert table.shape == (6, 7)
    assert np.all(np.diff(table[:, 3]) > 0)
    assert np.allclose(table[:, 2], np.linspace(0, 0.0005, 6))
    for name in ("force_displacement.png", "newton_convergence.png", "design.png", "design.csv",
                 "step_0005.vtk", "summary.json"):
        assert (tmp_path / name).stat().st_size > 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == 5 and summary["J"] > 0


def test_analyze_saved_design_roundtrip(tmp_path):
    cfg = str(CONFIGS / "beam_gradients.toml")
    assert main(["analyze", "--config", cfg, "--out-dir", str(tmp_path / "a")]) == EXIT_OK
    design = tmp_path / "a" / "design.csv"
    assert main(["analyze", "--config", cfg, "--out-dir", str(tmp_path / "b"), "--design", str(design)]) == EXIT_OK
    ja = json.load(open(tmp_path / "a" / "summary.json"))["J"]
    jb = json.load(open(tmp_path / "b" / "summary.json"))["J"]
    assert jb == pytest.approx(ja, rel=1e-8)


def test_check_gradients(tmp_path):
    cfg = str(CONFIGS / "beam_gradients.toml")
    assert main(["check-gradients", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_OK
    report = json.load(open(tmp_path / "gradients_report.json"))
    assert report["passed"]
    assert (tmp_path / "gradients.csv").exists() and (tmp_path / "gradients.png").exists()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text((CONFIGS / "stretch.toml").read_text() + "\n[objective]\nw_stiff = 0.3\nw_energy = 0.3\n")
    assert main(["analyze", "--config", str(bad), "--out-dir", str(tmp_path)]) == EXIT_CONFIG
    assert "config error: objective" in capsys.readouterr().err
    assert main(["analyze", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG
    assert main(["analyze", "--config", str(CONFIGS / "stretch.toml"), "--out-dir", str(tmp_path),
                 "--threads", "0"]) == EXIT_CONFIG


def test_design_row_mismatch(tmp_path):
    d = tmp_path / "d.csv"
    d.write_text("element,x,y,rho_bar,xi_bar_1\n0,0.5,0.5,1,1\n1,1.5,0.5,1,1\n")
    assert main(["analyze", "--config", str(CONFIGS / "stretch.toml"), "--out-dir", str(tmp_path),
                 "--design", str(d)]) == EXIT_CONFIG
