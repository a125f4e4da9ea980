import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from transport_gates.beams import BeamGeometry
from transport_gates.dynamics import (SIGMA_X, SIGMA_Y, SIGMA_Z, ConstantVelocity, PhaseShift,
                                      QubitState, SequenceOptions, StaticPulse, TransferPulse,
                                      TransportSegment, analytic_transit_parameters, average_fidelity,
                                      chain_product, propagate_spin, rotation_unitary, run_sequence,
                                      run_sequence_batch, segment_unitary, step_unitaries,
                                      transit_probability_analytic)
from transport_gates.errors import InvalidArgument, SequencingError

BEAM = BeamGeometry(center=0.0, waist=79.969e-6, peak_rabi=2 * np.pi * 11.338e3)


def hamiltonian(omega, delta, phi):
    return 0.5 * delta * SIGMA_Z + 0.5 * omega * (np.cos(phi) * SIGMA_X + np.sin(phi) * SIGMA_Y)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1e6), st.floats(-1e6, 1e6), st.floats(-np.pi, np.pi), st.floats(1e-9, 1e-5))
def test_step_matches_matrix_exponential(omega, delta, phi, dt):
    u = step_unitaries(omega, delta, phi, dt)
    np.testing.assert_allclose(u, expm(-1j * hamiltonian(omega, delta, phi) * dt), atol=1e-12)


def test_chain_product_order():
    rng = np.random.default_rng(0)
    us = step_unitaries(rng.uniform(0, 1e5, 7), rng.uniform(-1e5, 1e5, 7), 0.3, 1e-5)
    ref = np.eye(2)
    for u in us:
        ref = u @ ref
    np.testing.assert_allclose(chain_product(us), ref, atol=1e-14)
    np.testing.assert_array_equal(chain_product(us[:0]), np.eye(2))


def test_rotation_conventions():
    psi = rotation_unitary(np.pi, 0.0) @ QubitState.up().amplitudes
    assert abs(psi[1]) ** 2 == pytest.approx(1.0)
    # pi/2 about x then about y: Bloch vector ends at -z ... check against expm
    for theta, phi in ((np.pi / 2, 0.0), (1.3, 0.7)):
        ref = expm(-0.5j * theta * (np.cos(phi) * SIGMA_X + np.sin(phi) * SIGMA_Y))
        np.testing.assert_allclose(rotation_unitary(theta, phi), ref, atol=1e-14)


def test_propagation_against_ode():
    """Piecewise-constant stepping against an adaptive integrator for a chirped drive."""
    T, n = 200e-6, 4000
    dt = T / n
    t = (np.arange(n) + 0.5) * dt
    omega = 2 * np.pi * 20e3 * np.exp(-((t - T / 2) / 40e-6) ** 2)
    delta = 2 * np.pi * 3e3 * np.sin(2 * np.pi * t / T)
    out = propagate_spin(QubitState.up(), omega, delta, 0.4, dt)

    def rhs(tt, y):
        w = 2 * np.pi * 20e3 * np.exp(-((tt - T / 2) / 40e-6) ** 2)
        d = 2 * np.pi * 3e3 * np.sin(2 * np.pi * tt / T)
        psi = y[:2] + 1j * y[2:]
        dpsi = -1j * hamiltonian(w, d, 0.4) @ psi
        return np.concatenate([dpsi.real, dpsi.imag])

    sol = solve_ivp(rhs, (0, T), [1, 0, 0, 0], rtol=1e-11, atol=1e-12, method="DOP853")
    ref = sol.y[:2, -1] + 1j * sol.y[2:, -1]
    np.testing.assert_allclose(out.amplitudes, ref, atol=5e-6)
    assert out.norm == pytest.approx(1.0, abs=1e-12)


def test_propagate_validation():
    with pytest.raises(InvalidArgument):
        propagate_spin(QubitState.up(), [1.0, np.nan], [0.0, 0.0], 0.0, 1e-6)
    with pytest.raises(InvalidArgument):
        propagate_spin(QubitState.up(), [1.0], [0.0, 0.0], 0.0, 1e-6)
    with pytest.raises(InvalidArgument):
        propagate_spin(QubitState.up(), [1.0], [0.0], 0.0, 0.0)


def test_closed_form_limits():
    # chi -> 0 recovers a square Rabi flop at 2 Omega0 (the closed form's Omega0 is half the peak)
    t = np.linspace(0, 1e-4, 5)
    p = transit_probability_analytic(2 * np.pi * 5e3, 1e-3, 0.0, t)
    np.testing.assert_allclose(p, np.cos(2 * np.pi * 5e3 * t) ** 2, atol=1e-9)


def test_transit_matches_closed_form():
    v, z0, z1 = 0.62, -310e-6, 310e-6
    om0, chi, t0 = analytic_transit_parameters(BEAM, v, z0)
    assert om0 / (2 * np.pi) == pytest.approx(5.669e3, rel=1e-4)
    assert chi == pytest.approx(7753, rel=1e-4)
    traj = ConstantVelocity(z0, z1, v)
    grid = np.linspace(0, traj.duration, 50)
    num = [run_sequence(QubitState.up(), [TransportSegment(traj, (BEAM,), t_off=t)]).p_up for t in grid]
    np.testing.assert_allclose(num, transit_probability_analytic(om0, chi, t0, grid), atol=1e-6)


def test_direction_reversal_gives_same_rotation():
    traj = ConstantVelocity(-300e-6, 300e-6, 2.0)
    fwd = segment_unitary(TransportSegment(traj, (BEAM,)))
    rev = segment_unitary(TransportSegment(traj.reversed(), (BEAM,)))
    np.testing.assert_allclose(fwd, rev, atol=1e-10)


def test_phase_shift_and_static_pulse():
    half = StaticPulse(np.pi / 2)
    assert run_sequence(QubitState.up(), [half, half]).p_up == pytest.approx(0.0, abs=1e-14)
    assert run_sequence(QubitState.up(), [half, PhaseShift(np.pi), half]).p_up == pytest.approx(1.0)
    assert run_sequence(QubitState.up(), [half, TransferPulse(), PhaseShift(np.pi / 2), half]).p_up \
        == pytest.approx(0.5)


def test_batch_matches_single_runs():
    seg = TransportSegment(ConstantVelocity(-300e-6, 300e-6, 2.0), (BEAM,))
    base = 2 * np.pi * np.array([-5e3, 0.0, 2e3])
    batch = run_sequence_batch(QubitState.up(), [StaticPulse(0.3), seg], base)
    single = [run_sequence(QubitState.up(), [StaticPulse(0.3), seg], SequenceOptions(base_detuning=b)).p_up
              for b in base]
    np.testing.assert_allclose(batch, single, atol=1e-12)


def test_t_off_edges():
    traj = ConstantVelocity(-300e-6, 300e-6, 2.0)
    seg = TransportSegment(traj, (BEAM,))
    assert run_sequence(QubitState.up(), [TransportSegment(traj, (BEAM,), t_off=0.0)]).p_up == 1.0
    full = run_sequence(QubitState.up(), [seg]).p_up
    later = run_sequence(QubitState.up(), [TransportSegment(traj, (BEAM,), t_off=1.0)]).p_up
    assert later == pytest.approx(full, abs=1e-12)
    with pytest.raises(SequencingError, match="element 1"):
        run_sequence(QubitState.up(), [PhaseShift(0.0), TransportSegment(traj, (BEAM,), t_off=-1e-6)])


def test_average_fidelity():
    u = rotation_unitary(np.pi / 2)
    assert average_fidelity(u, u) == pytest.approx(1.0)
    assert average_fidelity(np.exp(0.3j) * u, u) == pytest.approx(1.0)
    # orthogonal Paulis: |Tr|^2 = 0 gives 1/3
    assert average_fidelity(SIGMA_X, SIGMA_Z) == pytest.approx(1 / 3)
    eps = 1e-3
    assert 1 - average_fidelity(rotation_unitary(np.pi / 2 + eps), u) == pytest.approx(eps**2 / 6, rel=1e-3)
    with pytest.raises(InvalidArgument):
        average_fidelity(2 * u, u)
