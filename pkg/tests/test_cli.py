import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from lmmss.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_shipped_config(tmp_path, capsys):
    code, out, _ = run(["solve", "--config", CONFIGS / "synthetic.json", "--out", tmp_path], capsys)
    assert code == 0
    assert "rank_deficient" in out
    result = json.loads((tmp_path / "result.json").read_text())
    assert result["stop_reason"] in ("small_gradient", "small_step")
    assert result["gradient_related"] is True
    assert result["dist"] < 1e-8
    rows = list(csv.DictReader((tmp_path / "trace.csv").open()))
    assert len(rows) == result["iterations"] + 1


def test_solve_reruns_are_byte_identical(tmp_path, capsys):
    for sub in ("a", "b"):
        assert run(["solve", "--config", CONFIGS / "synthetic.json", "--out", tmp_path / sub,
                    "--quiet"], capsys)[0] == 0
    for name in ("trace.csv", "result.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_changes_the_problem(tmp_path, capsys):
    run(["solve", "--config", CONFIGS / "synthetic.json", "--out", tmp_path / "a", "--quiet"],
        capsys)
    run(["solve", "--config", CONFIGS / "synthetic.json", "--out", tmp_path / "b", "--quiet",
         "--seed", "5"], capsys)
    a = json.loads((tmp_path / "a" / "result.json").read_text())
    b = json.loads((tmp_path / "b" / "result.json").read_text())
    assert a["x"] != b["x"]


def test_solve_with_discrepancy_and_explicit_operator(tmp_path, capsys):
    cfg = write_config(tmp_path, {
        "problem": "product", "x0": [0.5, 0.3],
        "scaling": {"kind": "raw", "matrix": [[-1.0, 1.0]]},
        "solver": {"eps": 0.0, "discrepancy": {"tau": 1.0, "noise_norm": 1e-2}},
    })
    code, _, _ = run(["solve", "--config", cfg, "--out", tmp_path / "o", "--quiet"], capsys)
    assert code == 0
    result = json.loads((tmp_path / "o" / "result.json").read_text())
    assert result["stop_reason"] == "discrepancy" and result["resid_norm"] <= 1e-2


def test_missing_config_exit_2(tmp_path, capsys):
    code, _, err = run(["solve", "--config", tmp_path / "nope.json"], capsys)
    assert code == 2
    assert json.loads(err)["error"] == "config_missing"


@pytest.mark.parametrize("body", [
    {"problem": "product", "bogus": 1},
    {"problem": "product", "solver": {"nu": 2.0}},
    {"problem": "product", "solver": {"colour": "red"}},
    {"problem": "no_such_problem"},
    {"problem": "product", "scaling": {"kind": "fourth_diff"}},
    {"problem": "product", "x0": [1.0, 2.0, 3.0]},
    {"problem": "product", "problem_args": {"zzz": 1}},
])
def test_bad_solve_configs_exit_2(tmp_path, capsys, body):
    code, _, err = run(["solve", "--config", write_config(tmp_path, body)], capsys)
    assert code == 2
    assert json.loads(err)["exit_code"] == 2


def test_invalid_json_exit_2(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    code, _, err = run(["diagnostics", "--config", path], capsys)
    assert code == 2 and json.loads(err)["error"] == "config_invalid"


def test_campaign_unknown_key_exit_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"n": 8, "sensor_grid": [3, 3]})
    assert run(["perfusion", "--config", cfg], capsys)[0] == 2


def test_usage_error_exit_2(capsys):
    assert main(["solve"]) == 2
    assert main(["frobnicate", "--config", "x"]) == 2
    capsys.readouterr()


def test_diagnostics_shipped_config(tmp_path, capsys):
    code, out, _ = run(["diagnostics", "--config", CONFIGS / "pair.json", "--out", tmp_path],
                       capsys)
    assert code == 0
    assert "PASS" in out and "FAIL" not in out
    report = json.loads((tmp_path / "diagnostics.json").read_text())
    assert report["passed"] and report["pairs"] == 100


def test_diagnostics_explicit_pair(tmp_path, capsys):
    cfg = write_config(tmp_path, {"A": [[2.0, 0.0], [0.0, 0.0]], "L": [[1.0, 1.0]],
                                  "psi_samples": 10})
    assert run(["diagnostics", "--config", cfg, "--out", tmp_path, "--quiet"], capsys)[0] == 0


def test_diagnostics_singular_pair_exit_3(tmp_path, capsys):
    cfg = write_config(tmp_path, {"A": [[1.0, 1.0], [2.0, 2.0]], "L": [[1.0, 1.0]]})
    code, _, err = run(["diagnostics", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 3 and json.loads(err)["error"] == "numerical_failure"


def test_perfusion_command_writes_report(tmp_path, capsys):
    cfg = write_config(tmp_path, {"n": 8, "sensors": [5, 5], "n_obs": 4, "substeps": 5,
                                  "noise_levels": [1e-3], "operators": ["L1"],
                                  "seeds": [0, 1, 2], "max_iter": 30})
    code, out, _ = run(["perfusion", "--config", cfg, "--out", tmp_path, "--seed", "7"], capsys)
    assert code == 0 and "RE(p)=" in out
    root = tmp_path / "perfusion"
    assert json.loads((root / "config.json").read_text())["seeds"] == [7]
    assert sorted(p.name for p in (root / "nl0.001_L1").iterdir()) == ["7.csv"]


def test_conductivity_command(tmp_path, capsys):
    cfg = write_config(tmp_path, {"example": "isotropic", "n": 6, "n_obs": 3, "substeps": 3,
                                  "noise_levels": [1e-2], "operators": ["L1"], "seeds": [0]})
    code, _, _ = run(["conductivity", "--config", cfg, "--out", tmp_path, "--quiet"], capsys)
    assert code == 0
    assert (tmp_path / "conductivity-isotropic" / "report.csv").is_file()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lmmss", "solve", "--config",
                           str(CONFIGS / "synthetic.json"), "--out", str(tmp_path), "--quiet"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "result.json").is_file()
