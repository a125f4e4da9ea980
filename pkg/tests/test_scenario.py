from pathlib import Path

import numpy as np
import pytest

from transport_gates.dynamics import ConstantVelocity, PhaseShift, StaticPulse, TransferPulse, TransportSegment
from transport_gates.errors import ConfigError
from transport_gates.scenario import doppler_settings, load_config, parse_config, parse_expression, well_plan

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = """
beams:
  - {name: B, center_um: 0, waist_um: 80, peak_rabi_khz: 10}
"""


@pytest.mark.parametrize("text, value", [("pi/2", np.pi / 2), ("3*pi/4", 0.75 * np.pi),
                                         ("-2**3", -8.0), (1.5, 1.5), ("4 * pi", 4 * np.pi)])
def test_expressions(text, value):
    assert parse_expression(text) == pytest.approx(value)


@pytest.mark.parametrize("text", ["__import__('os')", "e", "pi(2)", "1/0", "pi +", True, [1]])
def test_rejected_expressions(text):
    with pytest.raises(ConfigError):
        parse_expression(text)


@pytest.mark.parametrize("name", ["fig1", "fig2", "fig4a", "fig4b", "synth", "doppler"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / f"{name}.yaml")
    assert cfg.source == (CONFIGS / f"{name}.yaml").read_bytes()


def test_fig1_scan_and_sequence():
    cfg = load_config(CONFIGS / "fig1.yaml")
    (scan,) = cfg.scans
    assert scan.spec.variable == "t_off" and scan.fit == "transit_rabi"
    assert scan.spec.grid[-1] == pytest.approx(1e-3) and scan.spec.grid.size == 101
    assert scan.spec.shots == 350
    ion = cfg.scenario().ions[0]
    assert isinstance(ion.elements[0], TransferPulse) and isinstance(ion.elements[2], TransferPulse)
    seg = ion.elements[1]
    assert seg.trajectory == ConstantVelocity(-310e-6, 310e-6, 0.62)
    assert cfg.beam("B").peak_rabi == pytest.approx(2 * np.pi * 11.338e3)


def test_calibrated_velocities():
    cfg = load_config(CONFIGS / "fig4b.yaml")
    ion1, ion2 = cfg.scenario().ions
    v1 = ion1.elements[1].trajectory.velocity
    v2 = ion2.elements[1].trajectory.velocity
    assert v1 == pytest.approx(6.1977, abs=1e-3)  # pi on B1
    assert v2 == pytest.approx(9.1317, abs=1e-3)  # pi/2 on B2


def test_explicit_sequence_elements():
    cfg = parse_config(BASE + """
ions:
  - name: q
    sequence:
      - transfer: {infidelity: 0.01}
      - pulse: {theta: pi/2, phase: pi}
      - phase: pi/3
      - transport: {start_um: -300, end_um: 300, velocity: 2, t_off_us: 50, phase: 0.5}
""")
    els = cfg.scenario().ions[0].elements
    assert els[0] == TransferPulse(0.01)
    assert isinstance(els[1], StaticPulse) and els[1].phase == pytest.approx(np.pi)
    assert els[2] == PhaseShift(pytest.approx(np.pi / 3))
    assert isinstance(els[3], TransportSegment)
    assert els[3].t_off == pytest.approx(50e-6) and els[3].phase == 0.5
    assert cfg.scenario(seed=11).seed == 11


def test_time_units_and_frequency_grid():
    cfg = parse_config(BASE + """
scans:
  - {variable: t_off, start_us: 0, stop_ms: 0.2, points: 3}
  - {variable: frequency, start_khz: -1, stop_khz: 1, points: 5}
""")
    np.testing.assert_allclose(cfg.scans[0].spec.grid, [0, 1e-4, 2e-4])
    np.testing.assert_allclose(cfg.scans[1].spec.grid, [-1e3, -500, 0, 500, 1e3])
    assert cfg.scans[1].spec.shots == 250
    assert cfg.scans[1].spec.scan_index == 1


@pytest.mark.parametrize("text, match", [
    ("bogus: 1", "unknown field"),
    ("beams:\n  - {name: B, waist_um: 80, peak_rabi_khz: 10, colour: red}", "colour"),
    ("beams:\n  - {name: B, waist_um: -1, peak_rabi_khz: 10}", "waist"),
    ("spam: {transfer_error: 0.7}", "transfer_error"),
    ("scans:\n  - {variable: voltage, points: 3}", "variable"),
    ("scans:\n  - {variable: t_off, start_us: 0, stop_us: 1, stop_ms: 1, points: 3}", "one unit"),
    ("scans:\n  - {variable: phase, start: 0, points: 3}", "stop"),
    ("a: [1, 2", "YAML"),
    ("- 1", "mapping"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


@pytest.mark.parametrize("ions, match", [
    ("ions: []", "non-empty"),
    ("ions:\n  - {name: q}", "sequence"),
    ("ions:\n  - {sequence: [{warp: {}}]}", "unknown element"),
    ("ions:\n  - {transport: {start_um: 0, end_um: 0, velocity: 1}}", "coincide"),
    ("ions:\n  - {transport: {start_um: 0, end_um: 10, velocity: 0}}", "non-zero"),
    ("ions:\n  - {transport: {start_um: 0, end_um: 10, velocity: 1, beams: [X]}}", "unknown beam"),
    ("ions:\n  - {transport: {start_um: 0, end_um: 10, velocity: 1, trajectory: filtered}}", "filter"),
])
def test_sequence_errors(ions, match):
    cfg = parse_config(BASE + ions)
    with pytest.raises(ConfigError, match=match):
        cfg.scenario()


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/config.yaml")


def test_well_plan_and_doppler_sections():
    plan = well_plan(load_config(CONFIGS / "synth.yaml"))
    assert plan.n_wells == 2
    np.testing.assert_allclose(plan.positions[:, 0], [-850e-6, 350e-6])
    d = doppler_settings(load_config(CONFIGS / "doppler.yaml"))
    assert d.speed == 10 and d.theta == pytest.approx(np.pi) and d.frequencies.size == 101
    assert d.beam.misalignment == pytest.approx(np.deg2rad(1e-3))
    with pytest.raises(ConfigError, match="doppler"):
        doppler_settings(parse_config(BASE))
    with pytest.raises(ConfigError, match="wells"):
        well_plan(parse_config(BASE))


def test_synthesized_trajectory_from_config():
    from transport_gates.waveform import RealizedTrajectory
    cfg = parse_config(BASE + """
basis: {surrogate: {n_electrodes: 30, pitch_um: 120, width_um: 80, half_span_um: 2000}}
ions:
  - transport: {start_um: -250, end_um: 250, velocity: 7, trajectory: synthesized}
""")
    traj = cfg.scenario().ions[0].elements[1].trajectory
    assert isinstance(traj, RealizedTrajectory)
    assert traj.position[0] == pytest.approx(-250e-6, abs=1e-7)
    assert traj.position[-1] == pytest.approx(250e-6, abs=1e-7)
