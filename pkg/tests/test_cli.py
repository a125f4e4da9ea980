import json
from pathlib import Path

import numpy as np
import pytest

from transport_gates.cli import main
from transport_gates.measurement import ScanResult

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(tmp_path, *args, out="out"):
    return main([*args, "--out", str(tmp_path / out)])


def test_rabi_outputs_and_manifest(tmp_path):
    assert run(tmp_path, "rabi", "--config", str(CONFIGS / "fig1.yaml")) == 0
    out = tmp_path / "out"
    fit = json.loads((out / "rabi_ion_fit.json").read_text())
    assert fit["model"] == "transit_rabi" and fit["manifest"] == "manifest.json"
    assert fit["parameters"]["chi"]["value"] == pytest.approx(7753, rel=0.02)
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 7 and len(man["config_sha256"]) == 64
    assert set(man["outputs"]) == {"rabi_ion.csv", "rabi_ion_fit.json"}
    assert (out / "rabi_ion.csv").read_text().startswith("# variable=t_off unit=s seed=7")


def test_runs_are_reproducible(tmp_path):
    cfg = str(CONFIGS / "fig2.yaml")
    assert run(tmp_path, "ramsey", "--config", cfg, "--seed", "3", out="a") == 0
    assert run(tmp_path, "ramsey", "--config", cfg, "--seed", "3", "--threads", "3", out="b") == 0
    for name in ("ramsey_ion.csv", "ramsey_ion_fit.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert run(tmp_path, "ramsey", "--config", cfg, "--seed", "4", out="c") == 0
    assert (tmp_path / "a" / "ramsey_ion.csv").read_bytes() != (tmp_path / "c" / "ramsey_ion.csv").read_bytes()


def test_parallel_writes_both_ions_and_scans(tmp_path):
    assert run(tmp_path, "parallel", "--config", str(CONFIGS / "fig4a.yaml")) == 0
    out = tmp_path / "out"
    for scan in ("time", "frequency"):
        for ion in ("ion1", "ion2"):
            res = ScanResult.from_csv(out / f"{scan}_{ion}.csv")
            assert res.label == ion
            assert (out / f"{scan}_{ion}_fit.json").exists()
    f1 = json.loads((out / "frequency_ion1_fit.json").read_text())["parameters"]["x0"]
    f2 = json.loads((out / "frequency_ion2_fit.json").read_text())["parameters"]["x0"]
    assert f1["value"] - f2["value"] == pytest.approx(1.3e3, abs=5 * np.hypot(f1["sigma"], f2["sigma"]))


def test_calibrate_velocity_builtin_beam(tmp_path):
    assert run(tmp_path, "calibrate", "velocity", "--theta", "pi", "--beam", "B2") == 0
    rep = json.loads((tmp_path / "out" / "calibration_velocity.json").read_text())
    assert rep["value"] == pytest.approx(4.5658, abs=1e-4) and rep["unit"] == "m/s"
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["config_sha256"] is None


def test_calibrate_stark_and_doppler(tmp_path):
    assert run(tmp_path, "calibrate", "stark", out="s") == 0
    rep = json.loads((tmp_path / "s" / "calibration_stark.json").read_text())
    assert 0.9995 <= rep["value"] <= 0.9999
    assert run(tmp_path, "calibrate", "doppler", "--config", str(CONFIGS / "doppler.yaml"), out="d") == 0
    rep = json.loads((tmp_path / "d" / "calibration_doppler.json").read_text())
    assert rep["value"] == pytest.approx(rep["details"]["alpha_true_rad"], rel=0.1)
    assert (tmp_path / "d" / "doppler_forward.csv").exists()


def test_synth(tmp_path):
    assert run(tmp_path, "synth", "--config", str(CONFIGS / "synth.yaml")) == 0
    out = tmp_path / "out"
    rep = json.loads((out / "synthesis.json").read_text())
    assert rep["box_violations"] == 0 and rep["slew_violations"] == 0
    raw = [w for w in rep["wells"] if not w["filtered"]]
    assert max(w["max_position_error_m"] for w in raw) < 1e-6
    for name in ("waveform.csv", "waveform_filtered.csv", "trajectory_well1.csv",
                 "trajectory_well2_filtered.csv"):
        assert (out / name).exists()


def test_fit_subcommand(tmp_path):
    assert run(tmp_path, "rabi", "--config", str(CONFIGS / "fig1.yaml"), out="r") == 0
    assert main(["fit", "--model", "transit_rabi", "--input", str(tmp_path / "r" / "rabi_ion.csv"),
                 "--out", str(tmp_path / "f")]) == 0
    a = json.loads((tmp_path / "r" / "rabi_ion_fit.json").read_text())
    b = json.loads((tmp_path / "f" / "rabi_ion_transit_rabi_fit.json").read_text())
    assert a["parameters"] == b["parameters"]


@pytest.mark.parametrize("argv", [
    ["teleport"],
    ["rabi"],
    ["rabi", "--config", "/nonexistent.yaml"],
    ["fit", "--model", "gaussian", "--input", "/nonexistent.csv"],
    ["ramsey", "--config", str(CONFIGS / "fig1.yaml")],
    ["calibrate", "velocity", "--beam", "B9"],
])
def test_usage_and_config_errors_exit_2(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)] if argv != ["teleport"] else argv) == 2


def test_numerical_failure_exits_3(tmp_path, capsys):
    # a tiny rotation needs a speed far outside the solver bracket
    assert run(tmp_path, "calibrate", "velocity", "--theta", "1e-6") == 3
    assert "numerical failure" in capsys.readouterr().err
