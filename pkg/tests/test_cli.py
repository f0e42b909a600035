import copy
import csv
import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from periodlattice import cli
from periodlattice.exceptions import ConfigInvalid, IoFailure, PeriodLatticeError

TWO_PI = 2 * np.pi
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, config, name="job.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


def _run_cli(*args):
    proc = subprocess.run(
        [sys.executable, "-m", "periodlattice.cli", *map(str, args)],
        capture_output=True,
        text=True,
        timeout=300,
    )
    return proc


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


SYNTHETIC = {
    "schema_version": "1.0",
    "job": "full-verify",
    "system": {"name": "synthetic-twist", "params": {"m": 1}},
    "circle": {"center": [0.0, 0.0], "radius": 1.0, "samples": 32},
    "options": {"rho": [[0, 1]]},
    "seed": 3,
    "output": {"report": "report.json", "csv_dir": "csv"},
}


@pytest.fixture(scope="module")
def synthetic_report(tmp_path_factory):
    base = tmp_path_factory.mktemp("synthetic")
    return base, cli.run_job(copy.deepcopy(SYNTHETIC), base)


# full pipelines -----------------------------------------------------------------


def test_synthetic_full_verify(synthetic_report):
    _, report = synthetic_report
    assert report["overall"] == "pass"
    assert report["results"]["monodromy"]["entries"] == [[1, 1], [0, 1]]
    assert report["verdicts"]["maslov"] == "skipped"
    assert set(report["verdicts"].values()) <= {"pass", "skipped"}
    for stage in ("periods", "monodromy", "rho_invariance", "kernel_chain", "section", "s1_action", "mapping_torus"):
        assert report["verdicts"][stage] == "pass", stage


def test_iso_full_verify(tmp_path):
    config = json.loads((CONFIGS / "iso-full-verify.json").read_text())
    config["output"] = {}
    report = cli.run_job(config, tmp_path)
    assert report["overall"] == "pass"
    assert report["results"]["monodromy"]["entries"] == [[1, 0], [0, 1]]
    assert report["results"]["maslov"]["indices"] == [2, 2]


def test_report_echoes_tolerances_and_seed(synthetic_report):
    _, report = synthetic_report
    echo = report["config"]
    assert echo["tolerances"] == report["diagnostics"]["tolerances"]
    assert set(echo["tolerances"]) == {"abs_tol", "rel_tol", "newton_tol", "max_newton_iters"}
    assert echo["seed"] == 3
    cli.validate_report(report)


def test_report_schema_rejects_bad_verdicts(synthetic_report):
    _, report = synthetic_report
    bad = copy.deepcopy(report)
    bad["verdicts"]["periods"] = "maybe"
    with pytest.raises(jsonschema.ValidationError):
        cli.validate_report(bad)


# CSV output --------------------------------------------------------------------


def test_synthetic_trajectory_csv(synthetic_report):
    base, _ = synthetic_report
    header, data = _read_csv(base / "csv" / "trajectory.csv")
    assert header == ["s", "c1", "c2", "T1_1", "T1_2", "T2_1", "T2_2"]
    assert data.shape[0] == 32 + 1
    s = data[:, 0]
    np.testing.assert_allclose(data[:, 3:5], np.column_stack([np.full_like(s, TWO_PI), 0 * s]), atol=1e-10)
    np.testing.assert_allclose(data[:, 5:7], np.column_stack([TWO_PI * s, np.full_like(s, TWO_PI)]), atol=1e-10)


def test_csv_has_seventeen_digits(synthetic_report):
    base, _ = synthetic_report
    lines = (base / "csv" / "trajectory.csv").read_text().splitlines()[1:]
    fields = [f for line in lines for f in line.split(",")]
    assert all(f == format(float(f), ".17g") for f in fields)
    assert "6.2831853071795862" in fields


def test_constant_path_gives_constant_columns(tmp_path):
    config = {
        "job": "monodromy",
        "system": {"name": "champagne-bottle"},
        "loop": {"samples": [[0.5, 0.8]] * 5},
        "output": {"csv_dir": "csv"},
    }
    report = cli.run_job(config, tmp_path)
    assert report["results"]["monodromy"]["entries"] == [[1, 0], [0, 1]]
    _, data = _read_csv(tmp_path / "csv" / "trajectory.csv")
    assert data.shape[0] == 5
    assert np.max(np.ptp(data[:, 1:], axis=0)) < 1e-9


def test_one_dof_phase_csv(tmp_path):
    config = json.loads((CONFIGS / "oscillator-1d-maslov.json").read_text())
    config["output"] = {"csv_dir": "csv"}
    report = cli.run_job(config, tmp_path)
    assert report["results"]["maslov"]["indices"] == [2]
    header, data = _read_csv(tmp_path / "csv" / "maslov_cycle1.csv")
    assert header == ["s", "phase"]
    assert abs(data[-1, 1] - data[0, 1] - 4 * np.pi) < 1e-3


def test_unwritable_output_is_io_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    config = copy.deepcopy(SYNTHETIC)
    config["output"] = {"csv_dir": "file/csv"}
    with pytest.raises(IoFailure):
        cli.run_job(config, tmp_path)


# config validation -------------------------------------------------------------


@pytest.mark.parametrize(
    "patch",
    [
        {"job": "dance"},
        {"system": {"name": 3}},
        {"circle": None, "value": [0.5, 0.5], "job": "monodromy"},
        {"loop": {"samples": [[0.0, 1.0]]}},
        {"tolerances": {"abs_tol": -1.0}},
        {"seed": "seven"},
        {"surprise": 1},
    ],
)
def test_invalid_configs(patch):
    config = copy.deepcopy(SYNTHETIC)
    for key, value in patch.items():
        if value is None:
            config.pop(key)
        else:
            config[key] = value
    with pytest.raises(ConfigInvalid):
        cli.validate_config(config)


def test_unknown_system_is_config_error(tmp_path):
    config = copy.deepcopy(SYNTHETIC)
    config["system"] = {"name": "teapot"}
    with pytest.raises(ConfigInvalid):
        cli.run_job(config, tmp_path)


def test_module_errors_carry_context(tmp_path):
    config = {"job": "periods", "system": {"name": "champagne-bottle"}, "value": [0.5, 0.8],
              "options": {"t_max": 1.0}}
    with pytest.raises(PeriodLatticeError, match=r"\[lattice:periods\]"):
        cli.run_job(config, tmp_path)


def test_shipped_configs_validate():
    for path in CONFIGS.glob("*.json"):
        cli.validate_config(json.loads(path.read_text()))


# process-level behavior --------------------------------------------------------


def test_exit_codes_and_reproducibility(tmp_path):
    cfg = _write(tmp_path, SYNTHETIC)
    assert _run_cli("run", cfg).returncode == 0
    first = (tmp_path / "report.json").read_bytes()
    first_csv = (tmp_path / "csv" / "trajectory.csv").read_bytes()
    assert _run_cli("run", cfg).returncode == 0
    assert (tmp_path / "report.json").read_bytes() == first
    assert (tmp_path / "csv" / "trajectory.csv").read_bytes() == first_csv

    failing = copy.deepcopy(SYNTHETIC)
    failing["options"] = {"rho": [[1, 0]]}
    failing["output"] = {"report": "fail.json"}
    proc = _run_cli("run", _write(tmp_path, failing, "fail.json.cfg"))
    assert proc.returncode == 1
    report = json.loads((tmp_path / "fail.json").read_text())
    assert report["verdicts"]["rho_invariance"] == "fail"
    assert report["results"]["rho_invariance"]["residual_rows"] == [[0, 1]]

    bad = _run_cli("run", _write(tmp_path, {"job": "dance"}, "bad.json"))
    assert bad.returncode == 2 and "ConfigInvalid" in bad.stderr
    assert _run_cli("run", tmp_path / "missing.json").returncode == 2


def test_seed_override_and_stdout(tmp_path):
    config = {"job": "periods", "system": {"name": "iso-oscillator"}, "value": [0.5, 0.5], "seed": 1}
    cfg = _write(tmp_path, config)
    proc = _run_cli("run", cfg, "--seed", "11")
    assert proc.returncode == 0
    report = json.loads(proc.stdout)
    assert report["config"]["seed"] == 11 and report["overall"] == "pass"
    np.testing.assert_allclose(report["results"]["periods"]["basis"], TWO_PI * np.eye(2), atol=1e-8)
