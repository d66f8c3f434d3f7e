import csv
import json
import shutil
import subprocess
from pathlib import Path

import pytest

from bubblesim import BoxDomain, RunConfig, SimulationParams
from bubblesim.cli import check_run, main


def _write_config(tmp_path, name="cfg.json", **changes):
    cfg = RunConfig(SimulationParams(), BoxDomain.unit(10), N=8, x0=(0.5, 0.5, 0.5), R0=0.2, dt=1e-3, horizon=0.005,
                    velocity={"type": "random", "amplitude": 0.1})
    if changes:
        cfg = cfg.with_changes(**changes)
    path = tmp_path / name
    path.write_text(json.dumps(cfg.to_dict()))
    return path


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_run_then_check(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    out = tmp_path / "run"
    assert main(["run", str(cfg), "--out", str(out), "--allow-unsafe-horizon"]) == 0
    info = _last_json(capsys)
    assert info == {"out_dir": str(out), "exit_code": 0, "cause": None}
    assert main(["check", str(out)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)
    names = {name for name, _, _ in check_run(out)}
    assert {"dissipation_nonnegative", "density_envelope", "mass_conservation", "surface_closed_form"} <= names


def test_run_refuses_unsafe_horizon(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert main(["run", str(cfg), "--out", str(tmp_path / "run")]) == 2
    assert _last_json(capsys)["cause"] == "unsafe_horizon"
    assert (tmp_path / "run" / "abort.json").exists()


def test_default_output_directory(tmp_path, capsys):
    cfg = _write_config(tmp_path, allow_unsafe_horizon=True)
    assert main(["run", str(cfg)]) == 0
    assert (tmp_path / "cfg" / "summary.json").exists()


def test_check_detects_tampered_run(tmp_path, capsys):
    cfg = _write_config(tmp_path, allow_unsafe_horizon=True)
    out = tmp_path / "run"
    main(["run", str(cfg), "--out", str(out)])
    path = out / "continuity.csv"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("within_bounds")
    rows[-1][col] = "0"
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    capsys.readouterr()
    assert main(["check", str(out)]) == 2
    assert "FAIL density_envelope" in capsys.readouterr().out
    (out / "abort.json").write_text("{}")
    assert dict((n, ok) for n, ok, _ in check_run(out))["status_consistent"] is False


def test_constants_command(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert main(["constants", str(cfg)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert {"Q", "T1", "T2", "K", "c_p", "c_N", "safe_time", "T1_at_horizon"} <= set(data)
    assert data["T1"] > 0 and data["safe_time"] > 0


def test_sweep_command(tmp_path, capsys):
    _write_config(tmp_path, "base.json", allow_unsafe_horizon=True)
    spec = tmp_path / "sweep.json"
    spec.write_text(json.dumps({"axis": "n_pen", "values": [10.0, 100.0], "base": "base.json",
                                "metrics": ["penalization_time_integral"]}))
    assert main(["sweep", str(spec), "--out", str(tmp_path / "sw")]) == 0
    info = _last_json(capsys)
    assert info["failed"] == [] and "penalization_time_integral" in info["slopes"]
    assert (tmp_path / "sw" / "summary.csv").exists()


@pytest.mark.parametrize("content", [
    "{not json",
    json.dumps({"domain": {"lower": [0, 0, 0], "upper": [1, 1, 1], "shape": [8, 8, 8]}}),
    "UNKNOWN",
])
def test_bad_config_exits_2(tmp_path, capsys, content):
    path = tmp_path / "bad.json"
    if content == "UNKNOWN":
        data = json.loads(_write_config(tmp_path).read_text())
        data["bogus"] = 1
        content = json.dumps(data)
    path.write_text(content)
    assert main(["run", str(path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_missing_files_exit_2(tmp_path, capsys):
    assert main(["constants", str(tmp_path / "nope.json")]) == 2
    assert main(["check", str(tmp_path / "nowhere")]) == 2


def test_invalid_parameters_exit_2(tmp_path, capsys):
    cfg = _write_config(tmp_path, mu_f=-1.0, allow_unsafe_horizon=True)
    assert main(["run", str(cfg), "--out", str(tmp_path / "run")]) == 2
    assert _last_json(capsys)["cause"] == "validation"


def test_console_script_is_installed():
    exe = shutil.which("bubblesim")
    assert exe is not None
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    for cmd in ("run", "sweep", "check", "constants"):
        assert cmd in proc.stdout


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parent.parent / "configs"
    cfg = RunConfig.load(root / "standard.json")
    assert cfg.N == 24 and cfg.steps == 200
    spec = json.loads((root / "npen_sweep.json").read_text())
    base = RunConfig.load(root / spec["base"])
    assert spec["axis"] == "n_pen" and base.dt == 1e-5
