import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from fastslow.cli import main
from fastslow.config import (
    OUTPUT_ENV,
    build_config,
    config_hash,
    load_config_file,
    output_dir,
    parse_assignment,
    validate,
)
from fastslow.errors import ConfigInvalid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL_SIM = [
    "--set", "dimensionless={eps: 1.0e-2, sigma_bar_sq: 1.0}",
    "--set", "eta={kind: gaussian-bump, base: 1.0, amplitude: -0.5, center: [0, 0, 0], width: 0.5}",
    "--set", "domain_box={lower: [-2, -2, -2], upper: [2, 2, 2]}",
    "--paths", "40", "--dt", "1e-3", "--horizon-s", "0.05",
]


def _run(args, out):
    return main(list(args) + ["--output-dir", str(out)])


def _read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = [l for l in lines if l.startswith("# ")]
    rows = list(csv.reader([l for l in lines if not l.startswith("# ")]))
    return header, rows[0], rows[1:]


def test_preset_json(tmp_path):
    assert _run(["preset"], tmp_path) == 0
    doc = json.loads((tmp_path / "preset.json").read_text())
    assert set(doc) == {"header", "config", "result"}
    assert doc["header"]["tool"] == "fastslow" and doc["header"]["seed"] == 0
    dp = doc["result"]["dimensionless"]
    assert 1e-13 <= dp["m0"] <= 1e-11
    assert 1e-20 <= dp["eps"] <= 1e-16
    assert doc["result"]["reference"]["m0"] == 1e-12


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["simulate", "--seed", "5"] + SMALL_SIM, a) == 0
    assert _run(["simulate", "--seed", "5"] + SMALL_SIM, b) == 0
    for name in ("simulate.json", "simulate.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_worker_count_does_not_change_artifacts(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(["simulate", "--workers", "1"] + SMALL_SIM, a) == 0
    assert _run(["simulate", "--workers", "3"] + SMALL_SIM, b) == 0
    for name in ("simulate.json", "simulate.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_changes_result(tmp_path):
    assert _run(["simulate", "--seed", "1"] + SMALL_SIM, tmp_path / "a") == 0
    assert _run(["simulate", "--seed", "2"] + SMALL_SIM, tmp_path / "b") == 0
    assert (tmp_path / "a" / "simulate.csv").read_bytes() != (tmp_path / "b" / "simulate.csv").read_bytes()


def test_artifact_headers(tmp_path):
    assert _run(["simulate", "--seed", "9"] + SMALL_SIM, tmp_path) == 0
    header, cols, rows = _read_csv(tmp_path / "simulate.csv")
    keys = [h[2:].split(":")[0] for h in header]
    assert keys == ["tool", "version", "config_hash", "seed"]
    assert cols == ["s", "msd_full", "msd_reduced", "strong_error", "std_error"]
    doc = json.loads((tmp_path / "simulate.json").read_text())
    assert header[2].endswith(doc["header"]["config_hash"])
    assert all(float(r[3]) >= 0 for r in rows)


def test_limit_coeffs_csv(tmp_path):
    assert _run(["limit-coeffs", "-c", str(CONFIGS / "limit_coeffs.yaml")], tmp_path) == 0
    _, cols, rows = _read_csv(tmp_path / "limit-coeffs.csv")
    assert cols[:7] == ["index", "y0", "y1", "y2", "q0_0", "q0_1", "q0_2"]
    assert "C0_22" in cols and "rel_err_drift" in cols
    assert len(rows) == 20
    k = cols.index("rel_err_drift")
    assert max(float(r[k]) for r in rows) < 1e-6


def test_validity_window_json(tmp_path):
    assert _run(["validity-window", "-c", str(CONFIGS / "validity_window.yaml")], tmp_path) == 0
    res = json.loads((tmp_path / "validity-window.json").read_text())["result"]
    for key in ("K1", "K2_bar", "K3_bar", "K4", "t_min", "t_max", "empty"):
        assert key in res
    assert res["t_max"] >= 1e10 and res["empty"] is False


def test_error_sweep_columns_and_slope(tmp_path):
    args = SMALL_SIM + ["--set", "error_sweep={eps: [0.1, 0.01], s: 0.05, h_over_eps: 0.1}",
                        "--set", "x0=[0.3, 0, 0]", "--paths", "100"]
    assert _run(["error-sweep"] + args, tmp_path) == 0
    _, cols, rows = _read_csv(tmp_path / "error-sweep.csv")
    assert cols[:3] == ["eps", "strong_error", "std_error"]
    assert len(rows) == 2
    res = json.loads((tmp_path / "error-sweep.json").read_text())["result"]
    assert np.isfinite(res["slope"])


def test_config_error_exit_code(tmp_path, capsys):
    code = _run(["simulate", "--set", "colour=red"], tmp_path)
    assert code == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["exit_code"] == 2 and rec["error"] == "ConfigInvalid"


def test_numerical_failure_exit_code(tmp_path, capsys):
    # explicit Euler with a step far above the stability bound
    code = _run(["simulate", "--set", "scheme=euler-maruyama"] + SMALL_SIM + ["--dt", "1e-2"], tmp_path)
    assert code == 3
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "StepUnstable"
    saved = json.loads((tmp_path / "simulate.error.json").read_text())
    assert saved == rec


def test_missing_config_file(tmp_path):
    assert _run(["preset", "-c", str(tmp_path / "nope.yaml")], tmp_path) == 2


def test_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["preset"]) == 0
    assert (tmp_path / "env" / "preset.json").exists()
    cfg = build_config({}, {"experiment": "preset", "output": {"dir": str(tmp_path / "flag")}})
    assert output_dir(cfg) == tmp_path / "flag"


def test_validate_euler_warning():
    diags = validate({"dimensionless": {"eps": 1e-3, "sigma_bar_sq": 1.0}, "scheme": "euler-maruyama", "dt": 1e-2})
    assert any(d["level"] == "warning" and d["code"] == "euler_stability" for d in diags)


def test_validate_nonpositive_eta():
    diags = validate({"eta": {"kind": "gaussian-bump", "base": 1.0, "amplitude": -1.2, "center": [0, 0, 0], "width": 0.5},
                      "domain_box": {"lower": [-1, -1, -1], "upper": [1, 1, 1]}})
    assert any(d["level"] == "error" and d["code"] == "eta_positivity" for d in diags)
    assert any(d["level"] == "error" for d in validate({"eta": -0.5}))


def test_validate_missing_box():
    diags = validate({"experiment": "moments",
                      "eta": {"kind": "gaussian-bump", "base": 1.0, "amplitude": -0.5, "center": [0, 0, 0], "width": 0.5}})
    assert any(d["level"] == "error" and d["code"] == "domain_box" for d in diags)


def test_validate_unknown_key():
    diags = validate({"bogus": 1})
    assert diags and diags[0]["code"] == "schema"


def test_validate_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("eta: -1.0\n")
    assert main(["validate", "-c", str(bad)]) == 2
    assert main(["validate", "-c", str(CONFIGS / "simulate.yaml")]) == 0


def test_config_loading_and_overrides(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("seed: 4\ndt: 1e-3\ndimensionless:\n  eps: 1e-18\n  sigma_bar_sq: 10\n")
    raw = load_config_file(f)
    assert raw["dt"] == 1e-3 and raw["dimensionless"]["eps"] == 1e-18
    cfg = build_config(raw, parse_assignment("dimensionless.sigma_bar_sq=3"))
    assert cfg["dimensionless"] == {"eps": 1e-18, "sigma_bar_sq": 3}
    with pytest.raises(ConfigInvalid):
        build_config({"preset": "water", "dimensionless": {"eps": 1e-3, "sigma_bar_sq": 1.0}}, {})
    with pytest.raises(ConfigInvalid):
        parse_assignment("no-equals-sign")


def test_hash_ignores_execution_keys():
    a = build_config({}, {"experiment": "preset", "workers": 1})
    b = build_config({}, {"experiment": "preset", "workers": 4, "output": {"dir": "/tmp/x"}})
    c = build_config({}, {"experiment": "preset", "seed": 1})
    assert config_hash(a) == config_hash(b) != config_hash(c)


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "fastslow", "preset", "--output-dir", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert (tmp_path / "preset.json").exists()
