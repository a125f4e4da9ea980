import numpy as np
import pytest

from transport_gates.errors import InvalidArgument, OutOfRange
from transport_gates.io import read_waveform_csv, write_trajectory_csv, write_waveform_csv
from transport_gates.trap import find_wells
from transport_gates.waveform import (FilterModel, TrajectoryPlan, VoltageWaveform, apply_filter,
                                      plan_positions, plan_trajectory, realized_trajectory,
                                      synthesize_waveform, track_classical_ion)

OMEGA = 2 * np.pi * 2e6


@pytest.fixture(scope="module")
def plan():
    return plan_trajectory(350e-6, 850e-6, 7.0, OMEGA, 0.1)


@pytest.fixture(scope="module")
def waveform(basis, species, plan):
    return synthesize_waveform(basis, plan, species)


def test_plan_kinematics(plan):
    t, z = plan.times, plan.positions[0]
    assert z[0] == 350e-6 and z[-1] == pytest.approx(850e-6, abs=1e-12)
    # duration: distance / v plus one ramp time
    assert t[-1] >= 500e-6 / 7.0 + 5e-6 - 1e-6
    v = np.gradient(z, t)
    mid = (t > 10e-6) & (t < t[-1] - 10e-6)
    np.testing.assert_allclose(v[mid], 7.0, rtol=1e-9)
    assert np.all(np.diff(z) >= 0)


def test_plan_positions_continuous_at_ramp_joins():
    ramp = 5e-6
    for tj in (ramp, 20e-6 - ramp):
        z = plan_positions(np.array([tj - 1e-12, tj + 1e-12]), 0.0, 105e-6, 7.0, ramp)
        assert abs(z[1] - z[0]) < 1e-15 + 7.0 * 2e-12


@pytest.mark.parametrize("kwargs, match", [
    (dict(z_start=0, z_end=100e-6, velocity=-1.0), "velocity"),
    (dict(z_start=0, z_end=10e-6, velocity=7.0), "too short|fewer"),
    (dict(z_start=0, z_end=100e-6, velocity=1.0, sample_rate=-1), "sample rate"),
])
def test_plan_validation(kwargs, match):
    with pytest.raises(InvalidArgument, match=match):
        plan_trajectory(omega=OMEGA, **kwargs)


def test_wells_too_close_rejected():
    a = plan_trajectory(0, 100e-6, 2.0, OMEGA)
    b = plan_trajectory(40e-6, 140e-6, 2.0, OMEGA)
    with pytest.raises(InvalidArgument, match="apart"):
        TrajectoryPlan.combine([a, b])


def test_single_well_realised_against_find_wells(basis, species, plan, waveform):
    """Every sample places a well within 1 um and 1 % of the plan."""
    assert waveform.report.ok
    for n in range(plan.n_samples):
        target = plan.positions[0, n]
        wells = find_wells(basis, waveform.samples[n], species, (target - 100e-6, target + 100e-6))
        w = min(wells, key=lambda w: abs(w.position - target))
        assert abs(w.position - target) < 1e-6
        assert abs(w.omega / OMEGA - 1) < 0.01


@pytest.mark.parametrize("vmax, slew", [(0.12, 1e6), (0.14, 2e4), (10.0, 1e4)])
def test_box_and_slew_hold_exactly(basis, species, plan, vmax, slew):
    wf = synthesize_waveform(basis, plan, species, vmax=vmax, slew=slew)
    assert wf.constraint_violations() == (0, 0)
    assert np.abs(wf.samples).max() <= vmax
    assert np.abs(np.diff(wf.samples, axis=0)).max() <= slew / wf.sample_rate


def test_two_wells_without_crosstalk(basis, species):
    a = plan_trajectory(350e-6, 850e-6, 10.7, OMEGA, 0.1)
    b = plan_trajectory(-850e-6, -350e-6, 4.7, OMEGA, 0.1)
    both = synthesize_waveform(basis, TrajectoryPlan.combine([a, b]), species)
    for p in (a, b):
        solo = synthesize_waveform(basis, p, species)
        z0 = p.positions[0, 0]
        r2 = realized_trajectory(basis, both, species, z0).position[:p.n_samples]
        r1 = realized_trajectory(basis, solo, species, z0).position
        assert np.max(np.abs(r2 - r1)) < 0.1e-6


def test_plan_outside_basis(basis, species):
    with pytest.raises(OutOfRange):
        synthesize_waveform(basis, plan_trajectory(1900e-6, 1990e-6, 1.0, OMEGA), species)


def test_filter_matches_rc_step_response():
    fc, rate = 50e3, 1e6
    x = np.zeros((200, 1))
    x[10:] = 1.0
    y = apply_filter(VoltageWaveform(rate, x), FilterModel(fc)).samples[:, 0]
    n = np.arange(200) - 10
    # exact sampled RC: after k samples the output is 1 - a**(k+1)
    a = np.exp(-2 * np.pi * fc / rate)
    expect = np.where(n >= 0, 1 - a ** (n + 1), 0.0)
    np.testing.assert_allclose(y, expect, atol=1e-14)
    # continuous-time 1 - exp(-t/RC) to within one sample
    t = n / rate
    cont = np.where(n >= 0, 1 - np.exp(-2 * np.pi * fc * t), 0.0)
    assert np.max(np.abs(y - cont)) < 2 * np.pi * fc / rate


def test_filter_second_order_and_steady_start():
    x = np.full((50, 2), 3.0)
    y = apply_filter(VoltageWaveform(1e6, x), FilterModel((50e3, 10e3), order=2)).samples
    np.testing.assert_allclose(y, 3.0)
    with pytest.raises(InvalidArgument):
        FilterModel(0.0)
    with pytest.raises(InvalidArgument):
        FilterModel(1e3, order=0)


def test_filter_increases_velocity_ripple(basis, species, plan, waveform):
    def ripple(wf):
        tr = realized_trajectory(basis, wf, species, plan.positions[0, 0])
        m = (tr.times > 15e-6) & (tr.times < tr.times[-1] - 15e-6)
        return np.std(tr.velocity[m]) / 7.0

    raw = ripple(waveform)
    filtered = ripple(apply_filter(waveform, FilterModel(50e3)))
    assert filtered > 5 * raw


def test_realised_trajectory_tracks_plan(basis, species, plan, waveform):
    tr = realized_trajectory(basis, waveform, species, plan.positions[0, 0])
    assert np.max(np.abs(tr.position - plan.positions[0])) < 1e-6
    np.testing.assert_allclose(tr.omega, OMEGA, rtol=0.01)
    assert np.all(tr.depth > 0)


@pytest.mark.slow
def test_classical_ion_follows_well(basis, species, plan, waveform):
    path = track_classical_ion(basis, waveform, species, plan.positions[0, 0])
    assert path.max_deviation < 1e-6
    assert path.times[-1] == pytest.approx(waveform.times[-1])


def test_static_well_conserves_energy(basis, species, waveform):
    static = VoltageWaveform(1e6, np.repeat(waveform.samples[:1], 100, axis=0))
    dz = 0.5e-6
    path = track_classical_ion(basis, static, species, 350e-6 + dz)
    osc = 0.5 * species.mass * OMEGA**2 * dz**2
    assert np.ptp(path.energy) / osc < 1e-6


def test_waveform_csv_round_trip(tmp_path, basis, species, plan, waveform):
    p = tmp_path / "wf.csv"
    write_waveform_csv(waveform, p, comment="test")
    back = read_waveform_csv(p)
    np.testing.assert_array_equal(back.samples, waveform.samples)
    assert back.sample_rate == pytest.approx(waveform.sample_rate)
    tr = realized_trajectory(basis, waveform, species, plan.positions[0, 0])
    write_trajectory_csv(tr, tmp_path / "tr.csv")
    header = (tmp_path / "tr.csv").read_text().splitlines()[0]
    assert header == "t,z,v,omega,depth"
