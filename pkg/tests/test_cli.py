import csv
import json
import os
import shutil
from pathlib import Path

import numpy as np
import pytest

from moscolan.cli import main

GOLDEN = Path(__file__).parent / "golden"
CASES = sorted(p.name for p in GOLDEN.iterdir() if (p / "case.json").exists())
# set to rewrite the expected outputs after an intentional format change
REGEN = os.environ.get("MOSCOLAN_REGEN_GOLDEN") == "1"


def run_case(name, out):
    case = json.loads((GOLDEN / name / "case.json").read_text())
    cfg = out / "config.json"
    cfg.write_text(json.dumps(case["config"]))
    code = main([case["command"], "--config", str(cfg), "--out", str(out / "result"), "--quiet"])
    return code, out / "result"


def _outputs(folder):
    return sorted(p.name for p in folder.iterdir())


@pytest.mark.parametrize("name", CASES)
def test_golden(name, tmp_path):
    code, result = run_case(name, tmp_path)
    assert code == 0
    expected = GOLDEN / name / "expected"
    if REGEN:
        shutil.rmtree(expected, ignore_errors=True)
        shutil.copytree(result, expected)
    assert _outputs(result) == _outputs(expected)
    for fname in _outputs(expected):
        assert (result / fname).read_bytes() == (expected / fname).read_bytes(), fname


@pytest.mark.parametrize("name", CASES)
def test_rerun_is_byte_identical(name, tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    _, first = run_case(name, tmp_path / "a")
    _, second = run_case(name, tmp_path / "b")
    for fname in _outputs(first):
        assert (first / fname).read_bytes() == (second / fname).read_bytes()


def _write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def test_simulate_rows_and_noiseless_residuals(tmp_path):
    _, result = run_case("simulate_noiseless", tmp_path)
    rows = list(csv.reader((result / "dataset.csv").open()))
    assert rows[0] == ["y", "x1", "x2", "residual"]
    assert len(rows) == 4
    assert all(float(r[-1]) == 0.0 for r in rows[1:])


def test_seed_override_changes_output(tmp_path):
    case = json.loads((GOLDEN / "simulate" / "case.json").read_text())
    cfg = _write(tmp_path, case["config"])
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--quiet"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "8", "--quiet"]) == 0
    assert (tmp_path / "a" / "dataset.csv").read_bytes() != (tmp_path / "b" / "dataset.csv").read_bytes()


def test_fit_echo_and_feasibility(tmp_path):
    _, result = run_case("fit", tmp_path)
    report = json.loads((result / "fit.json").read_text())
    assert report["schema_version"] == "1"
    assert report["converged"] and report["feasible"]
    cfg = report["config"]
    for key in ("penalty_weight", "penalty_form", "tol", "max_iter", "constraint", "seed"):
        assert key in cfg
    assert cfg["model"]["noise"] == {"kind": "laplace", "scale": 1.0}
    assert len(cfg["model"]["decay"]) == 2


def test_fit_noiseless_residual(tmp_path):
    cfg = {"model": {"theta0": [0.7, -1.3], "n": 20, "noise": {"kind": "laplace", "scale": 0.0}}, "seed": 0}
    assert main(["fit", "--config", _write(tmp_path, cfg), "--out", str(tmp_path), "--quiet"]) == 0
    report = json.loads((tmp_path / "fit.json").read_text())
    assert report["optimality_residual"] <= report["config"]["tol"]
    np.testing.assert_allclose(report["theta"], [0.7, -1.3], atol=1e-10)


def test_fit_from_csv(tmp_path):
    _, result = run_case("simulate", tmp_path)
    cfg = {"data": str(result / "dataset.csv")}
    assert main(["fit", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "fit"), "--quiet"]) == 0
    assert json.loads((tmp_path / "fit" / "fit.json").read_text())["n"] == 5


def test_empty_dataset_exit_code(tmp_path, capsys):
    data = tmp_path / "empty.csv"
    data.write_text("y,x1\n")
    code = main(["fit", "--config", _write(tmp_path, {"data": str(data)}), "--out", str(tmp_path)])
    assert code == 1
    assert "empty" in capsys.readouterr().err


def test_unknown_field_exit_code(tmp_path, capsys):
    cfg = {"model": {"theta0": [1.0], "n": 3}, "seed": 1, "colour": "blue"}
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    assert "colour" in capsys.readouterr().err
    cfg = {"model": {"theta0": [1.0], "n": 3, "noise": {"kind": "laplace", "width": 2}}, "seed": 1}
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 1


def test_missing_seed_and_bad_args(tmp_path):
    cfg = {"model": {"theta0": [1.0], "n": 3}}
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--out", str(tmp_path)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["simulate", "--config", _write(tmp_path, cfg), "--threads", "0"]) == 1


def test_non_convergence_exit_code(tmp_path):
    cfg = {"model": {"theta0": [0.5, -0.5, 0.25], "n": 300}, "seed": 4, "max_iter": 3}
    assert main(["fit", "--config", _write(tmp_path, cfg), "--out", str(tmp_path), "--quiet"]) == 2
    report = json.loads((tmp_path / "fit.json").read_text())
    assert report["converged"] is False


def test_mosco_outputs(tmp_path):
    _, result = run_case("mosco", tmp_path)
    report = json.loads((result / "mosco.json").read_text())
    assert report["tail_bound"] == 2.0**-16 and report["K"] == 16
    rows = list(csv.DictReader((result / "resolvent.csv").open()))
    assert all(float(r["distance"]) == 0.0 for r in rows if int(r["n"]) >= 4)


def test_mosco_identical_functionals(tmp_path):
    f = {"kind": "quadratic", "op": [[2.0, 0.0], [0.0, 1.0]]}
    cfg = {"dim": 2, "sequence": [f, f], "limit": f, "seed": 0, "probe_count": 4}
    assert main(["mosco", "--config", _write(tmp_path, cfg), "--out", str(tmp_path), "--quiet"]) == 0
    rows = list(csv.DictReader((tmp_path / "resolvent.csv").open()))
    assert len(rows) == 8 and all(float(r["distance"]) == 0.0 for r in rows)
    assert json.loads((tmp_path / "mosco.json").read_text())["graph_distance"] == [0.0, 0.0]


def test_lan_zero_probe(tmp_path):
    cfg = {"model": {"theta0": [0.5, -0.5], "n": 100}, "probe": [0.0, 0.0], "replications": 50, "seed": 1}
    assert main(["lan", "--config", _write(tmp_path, cfg), "--out", str(tmp_path), "--quiet"]) == 0
    rows = list(csv.DictReader((tmp_path / "statistics.csv").open()))
    assert len(rows) == 50 and all(float(r["statistic"]) == 0.0 for r in rows)
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["summary"]) >= {"mean", "variance", "q0.5", "q0.9", "q0.95", "q0.99", "variance_ratio"}


def test_lr_null_equals_full(tmp_path):
    h = {"kind": "halfspace", "normal": [1.0, 0.0], "offset": 0.0}
    cfg = {"model": {"theta0": [0.0, 0.5], "n": 200}, "hypothesis": {"full_set": h, "null_set": h},
           "replications": 10, "seed": 2, "limit_draws": 100}
    assert main(["lr", "--config", _write(tmp_path, cfg), "--out", str(tmp_path), "--quiet"]) == 0
    rows = list(csv.DictReader((tmp_path / "statistics.csv").open()))
    assert all(float(r["statistic"]) == 0.0 for r in rows)


def test_threads_do_not_change_outputs(tmp_path):
    case = json.loads((GOLDEN / "lan" / "case.json").read_text())
    cfg = _write(tmp_path, case["config"])
    main(["lan", "--config", cfg, "--out", str(tmp_path / "a"), "--quiet"])
    main(["lan", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3", "--quiet"])
    for name in ("statistics.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
