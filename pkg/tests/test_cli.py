import json
import os

import numpy as np
import pytest

from parvi.cli import main
from parvi.problem import bundled_path


def run(args):
    return main(args)


def test_validate_bundled_ok(capsys):
    assert run(["validate", "obstacle1d"]) == 0
    out = capsys.readouterr().out
    assert "all checks passed" in out


def test_validate_bad_problem(capsys):
    assert run(["validate", "bad_nonmonotone"]) == 1
    out = capsys.readouterr().out
    assert "monotone-B" in out
    assert "witness" in out


def test_validate_by_path():
    assert run(["validate", bundled_path("heat"), "--quiet"]) == 0


def test_missing_file_exits_2(capsys):
    assert run(["validate", "/no/such/file.prb"]) == 2
    assert "error" in capsys.readouterr().err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["solve", "heat", "--dt", "not-a-number"])
    assert exc.value.code == 2


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["frobnicate"])
    assert exc.value.code == 2


def test_solve_writes_three_files(tmp_path):
    out = tmp_path / "run"
    assert run(["solve", "obstacle1d", "--out", str(out), "--quiet",
                "--t-end", "0.1"]) == 0
    names = sorted(os.listdir(out))
    assert names == ["diagnostics.csv", "manifest.json", "trajectory.csv"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "solve"
    assert "[coefficients]" in manifest["problem"]["text"]
    assert manifest["config"]["t_end"] == 0.1


def test_solve_single_clipped_step_warns(tmp_path, capsys):
    out = tmp_path / "clip"
    assert run(["solve", "heat", "--dt", "1.0", "--out", str(out)]) == 0
    captured = capsys.readouterr().out
    assert "single clipped step" in captured
    rows = (out / "trajectory.csv").read_text().splitlines()
    assert len(rows) == 3  # header + two time levels


def test_solve_deterministic_from_manifest(tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert run(["solve", "obstacle1d", "--out", str(out1), "--quiet"]) == 0
    manifest = json.loads((out1 / "manifest.json").read_text())
    # Re-run with the options recorded in the manifest.
    prb = tmp_path / "from_manifest.prb"
    prb.write_text(manifest["problem"]["text"])
    cfg = manifest["config"]
    assert run(["solve", str(prb), "--out", str(out2), "--quiet",
                "--eps", str(cfg["eps"]), "--dt", str(cfg["dt"]),
                "--t-end", str(cfg["t_end"]),
                "--seed", str(manifest["seed"])]) == 0
    for name in ("trajectory.csv", "diagnostics.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_sweep_summary_rows(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert run(["sweep", "obstacle1d", "--eps-stages", "5",
                "--out", str(out), "--quiet"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0] == "eps,penalty_residual,consec_distance"
    assert len(lines) == 6  # header + 5 stages
    residuals = [float(line.split(",")[1]) for line in lines[1:]]
    assert all(a > b for a, b in zip(residuals, residuals[1:]))


def test_oracle_compare_distances_decrease(tmp_path):
    out = tmp_path / "oc"
    assert run(["oracle-compare", "obstacle1d", "--eps-stages", "4",
                "--out", str(out), "--quiet"]) == 0
    lines = (out / "oracle_compare.csv").read_text().splitlines()[1:]
    dists = [float(line.split(",")[1]) for line in lines]
    assert len(dists) == 4
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_convergence_heat_orders(tmp_path):
    out = tmp_path / "conv"
    assert run(["convergence", "heat", "--levels", "4",
                "--out", str(out), "--quiet"]) == 0
    summary = (out / "summary.txt").read_text()
    order = float(summary.splitlines()[0].rsplit(":", 1)[1])
    assert order >= 1.8
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "h,dt,err_l2_final,err_l2_qt"
    assert len(lines) == 5


def test_convergence_linear_exact(tmp_path):
    out = tmp_path / "lin"
    assert run(["convergence", "linear", "--levels", "3",
                "--out", str(out), "--quiet"]) == 0
    assert "exact" in (out / "summary.txt").read_text()


def test_quiet_suppresses_stdout(tmp_path, capsys):
    out = tmp_path / "q"
    run(["solve", "heat", "--out", str(out), "--quiet"])
    assert capsys.readouterr().out == ""


def test_solver_failure_exit_3(tmp_path, monkeypatch):
    # An impossible Newton tolerance aborts the solve; diagnostics are
    # still written and the exit code is 3.
    bad = tmp_path / "bad.prb"
    text = open(bundled_path("nlheat"), encoding="utf-8").read()
    bad.write_text(text + "newton_tol = 1e-30\nmax_iter = 3\n")
    out = tmp_path / "failed"
    assert run(["solve", str(bad), "--out", str(out), "--quiet"]) == 3
    assert (out / "diagnostics.csv").exists()
    assert (out / "manifest.json").exists()
