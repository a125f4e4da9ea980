"""Two-level qubit evolution through transport gates and static pulses.

Rotating-frame Hamiltonian, with |up> = (1, 0) the +1 eigenstate of sigma_z::

    H(t) = delta(t)/2 sigma_z + Omega(t)/2 (cos(phi) sigma_x + sin(phi) sigma_y)

Each time step uses the exact exponential of ``H`` held at its midpoint
value, so every step is unitary regardless of step size.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erf

from .beams import BeamGeometry, rabi_at_position
from .errors import InvalidArgument, SequencingError
from .waveform import RealizedTrajectory

logger = logging.getLogger(__name__)

IDENTITY = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

NORM_TOL = 1e-9
UNITARY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class QubitState:
    amplitudes: np.ndarray  # (c_up, c_down)

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=complex).reshape(2)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def up(cls) -> "QubitState":
        return cls(np.array([1, 0], dtype=complex))

    @classmethod
    def down(cls) -> "QubitState":
        return cls(np.array([0, 1], dtype=complex))

    @property
    def p_up(self) -> float:
        return float(abs(self.amplitudes[0]) ** 2)

    @property
    def p_down(self) -> float:
        return float(abs(self.amplitudes[1]) ** 2)

    @property
    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


def rotation_unitary(theta: float, phi: float = 0.0) -> np.ndarray:
    """``cos(theta/2) I - i sin(theta/2) (cos(phi) sigma_x + sin(phi) sigma_y)``."""
    return (np.cos(theta / 2) * IDENTITY
            - 1j * np.sin(theta / 2) * (np.cos(phi) * SIGMA_X + np.sin(phi) * SIGMA_Y))


def is_unitary(u, tol: float = UNITARY_TOL) -> bool:
    u = np.asarray(u)
    return u.shape == (2, 2) and np.allclose(u.conj().T @ u, IDENTITY, atol=tol, rtol=0)


def step_unitaries(omega, delta, phi, dt) -> np.ndarray:
    """Exact propagators of piecewise-constant ``H``; broadcasts, shape (..., 2, 2)."""
    omega = np.asarray(omega, dtype=float)
    delta = np.asarray(delta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    hx = 0.5 * omega * np.cos(phi)
    hy = 0.5 * omega * np.sin(phi)
    hz = 0.5 * delta
    hx, hy, hz = np.broadcast_arrays(hx, hy, hz)
    mag = np.sqrt(hx**2 + hy**2 + hz**2)
    angle = mag * dt
    c = np.cos(angle)
    # sin(a)/|h| with the |h| -> 0 limit dt
    with np.errstate(invalid="ignore", divide="ignore"):
        s_over = np.where(mag > 0, np.sin(angle) / np.where(mag > 0, mag, 1.0), dt)
    u = np.empty(hx.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = c - 1j * s_over * hz
    u[..., 1, 1] = c + 1j * s_over * hz
    u[..., 0, 1] = -1j * s_over * (hx - 1j * hy)
    u[..., 1, 0] = -1j * s_over * (hx + 1j * hy)
    return u


def chain_product(u: np.ndarray) -> np.ndarray:
    """Time-ordered product ``u[n-1] @ ... @ u[0]`` over axis -3, by pairwise reduction."""
    u = np.asarray(u)
    if u.shape[-3] == 0:
        return np.broadcast_to(IDENTITY, u.shape[:-3] + (2, 2)).copy()
    while u.shape[-3] > 1:
        n = u.shape[-3]
        if n % 2:
            pad = np.broadcast_to(IDENTITY, u.shape[:-3] + (1, 2, 2))
            u = np.concatenate([u, pad], axis=-3)
        u = u[..., 1::2, :, :] @ u[..., 0::2, :, :]
    return u[..., 0, :, :]


def _check_series(*arrays):
    for a in arrays:
        if np.any(~np.isfinite(a)):
            raise InvalidArgument("NaN or infinite value in drive series")


def _renormalize(psi):
    norm = np.sqrt(np.sum(np.abs(psi) ** 2, axis=-1, keepdims=True))
    drift = np.abs(norm - 1.0)
    if np.any(drift > NORM_TOL):
        raise ArithmeticError(f"state norm drifted by {drift.max():.3g}")
    return np.where(drift > 1e-12, psi / norm, psi)


def propagate_spin(state: QubitState, omega, delta, phi: float, dt: float) -> QubitState:
    """Evolve ``state`` through steps of length ``dt``.

    ``omega[k]`` and ``delta[k]`` are the drive values at the midpoint of
    step ``k``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if omega.shape != delta.shape:
        raise InvalidArgument("Rabi and detuning series must have equal length")
    if not dt > 0:
        raise InvalidArgument("time step must be positive")
    _check_series(omega, delta, np.asarray(phi, dtype=float))
    u = chain_product(step_unitaries(omega, delta, phi, dt))
    return QubitState(_renormalize(u @ state.amplitudes))


def transit_probability_analytic(omega0: float, chi: float, t0: float, t):
    """Closed-form up-state population for a Gaussian transit.

    ``P = cos^2(zeta/2)``, ``zeta = (Omega0/chi) sqrt(pi) [erf(chi t0) - erf(chi (t0 - t))]``.
    """
    t = np.asarray(t, dtype=float)
    f = erf(chi * t0) - erf(chi * (t0 - t))
    zeta = omega0 / chi * np.sqrt(np.pi) * f
    return np.cos(zeta / 2) ** 2


def analytic_transit_parameters(beam: BeamGeometry, velocity: float, z_start: float):
    """``(Omega0, chi, t0)`` such that the closed form matches a constant-velocity transit.

    Integrating ``Omega_pk exp(-chi^2 (t - t0)^2)`` gives a pulse area of
    ``(Omega_pk sqrt(pi) / 2 chi) f(t, t0)``, so the closed form's ``Omega0``
    is half the physical peak Rabi frequency, and ``chi = sqrt(p) |v| sin(theta) / w0``.
    """
    chi = beam.axial_decay * abs(velocity)
    t0 = (beam.center - z_start) / velocity
    return beam.peak_rabi / 2.0, chi, t0


def average_fidelity(actual, target) -> float:
    """``(d + |Tr(target^dag actual)|^2) / (d (d + 1))`` for d = 2."""
    actual = np.asarray(actual, dtype=complex)
    target = np.asarray(target, dtype=complex)
    for name, u in (("actual", actual), ("target", target)):
        if not is_unitary(u):
            raise InvalidArgument(f"{name} gate is not unitary")
    d = 2
    overlap = np.trace(target.conj().T @ actual)
    return float((d + abs(overlap) ** 2) / (d * (d + 1)))


# --- pulse sequences ----------------------------------------------------------

@dataclass(frozen=True)
class ConstantVelocity:
    z_start: float
    z_end: float
    velocity: float

    def __post_init__(self):
        if self.velocity == 0 or np.sign(self.z_end - self.z_start) not in (0, np.sign(self.velocity)):
            raise InvalidArgument("velocity must be non-zero and point from z_start to z_end")

    @property
    def duration(self) -> float:
        return abs(self.z_end - self.z_start) / abs(self.velocity)

    def position(self, t):
        return self.z_start + self.velocity * np.asarray(t, dtype=float)

    def speed(self, t):
        return np.full(np.shape(t), float(self.velocity))

    def reversed(self) -> "ConstantVelocity":
        return ConstantVelocity(self.z_end, self.z_start, -self.velocity)


class _SampledTrajectory:
    """Cubic interpolation of a realised trajectory, times relative to its start."""

    def __init__(self, traj: RealizedTrajectory):
        t = np.asarray(traj.times) - traj.times[0]
        self.duration = float(t[-1])
        self.dt = float(t[1] - t[0]) if t.size > 1 else np.inf
        self._z = CubicSpline(t, traj.position)
        self._t = t
        self._v = np.asarray(traj.velocity)

    def position(self, t):
        return self._z(t)

    def speed(self, t):
        return np.interp(t, self._t, self._v)


@dataclass(frozen=True)
class TransportSegment:
    trajectory: object  # ConstantVelocity or RealizedTrajectory
    beams: tuple
    t_off: float | None = None
    phase: float = 0.0


@dataclass(frozen=True)
class StaticPulse:
    theta: float
    phase: float = 0.0
    detuning: float = 0.0
    rabi: float = 2 * np.pi * 50e3

    @property
    def duration(self) -> float:
        return abs(self.theta) / self.rabi if self.rabi > 0 else 0.0


@dataclass(frozen=True)
class PhaseShift:
    phi: float


@dataclass(frozen=True)
class TransferPulse:
    """Coherent population transfer; only its error enters, via the SPAM model."""

    infidelity: float | None = None
    affects_contrast: bool = True


@dataclass(frozen=True)
class SequenceOptions:
    base_detuning: float = 0.0  # rad/s, laser difference-frequency offset
    step_fraction: float = 0.01  # steps no longer than this over the peak Rabi frequency
    max_step: float | None = None


@dataclass
class SequenceResult:
    state: QubitState
    unitary: np.ndarray = field(repr=False)

    @property
    def p_up(self) -> float:
        return self.state.p_up


def _resolve(trajectory):
    if isinstance(trajectory, ConstantVelocity):
        return trajectory, np.inf
    if isinstance(trajectory, RealizedTrajectory):
        s = _SampledTrajectory(trajectory)
        return s, s.dt
    raise InvalidArgument(f"unsupported trajectory type {type(trajectory).__name__}")


def transport_drive(segment: TransportSegment, options: SequenceOptions, base_detuning=None):
    """Midpoint-sampled ``(omega, delta, dt)`` arrays for a transport segment.

    The detuning follows the beam whose centre is nearest the ion: its
    static offset plus its Doppler shift.  ``base_detuning`` may be an array,
    giving a trailing batch axis on ``delta``.
    """
    beams = tuple(segment.beams)
    if not beams:
        raise InvalidArgument("transport segment has no beams")
    traj, traj_dt = _resolve(segment.trajectory)
    duration = traj.duration
    t_off = duration if segment.t_off is None else segment.t_off
    if not t_off >= 0:
        raise InvalidArgument(f"t_off = {t_off:.6g} s must be non-negative")
    # switching off after the ion has left is the same as the full transit
    t_off = min(t_off, duration)
    peak = max(b.peak_rabi for b in beams)
    dt_max = options.step_fraction / peak if peak > 0 else duration
    dt_max = min(dt_max, traj_dt)
    if options.max_step is not None:
        dt_max = min(dt_max, options.max_step)

    base = options.base_detuning if base_detuning is None else base_detuning
    base = np.asarray(base, dtype=float)
    pieces = []
    for lo, hi, lit in ((0.0, t_off, True), (t_off, duration, False)):
        span = hi - lo
        if span <= 0:
            continue
        n = max(int(np.ceil(span / dt_max)), 1)
        dt = span / n
        t = lo + (np.arange(n) + 0.5) * dt
        z = traj.position(t)
        v = traj.speed(t)
        centers = np.array([b.center for b in beams])
        nearest = np.argmin(np.abs(z[:, None] - centers[None, :]), axis=1)
        offsets = np.array([b.stark_offset for b in beams])[nearest]
        dk = np.array([b.residual_wavevector for b in beams])[nearest]
        delta = offsets + dk * v
        if lit:
            omega = sum(rabi_at_position(b, z) for b in beams)
        else:
            omega = np.zeros_like(t)
        delta = delta.reshape(delta.shape + (1,) * base.ndim) + base
        pieces.append((omega, delta, dt))
    return pieces


def run_sequence(initial: QubitState, elements, options: SequenceOptions | None = None,
                 base_detuning=None) -> SequenceResult:
    """Apply ``elements`` in order.  Transfer pulses are ignored here."""
    options = options or SequenceOptions()
    base = options.base_detuning if base_detuning is None else base_detuning
    u_total = IDENTITY.copy()
    phase = 0.0
    for i, el in enumerate(elements):
        try:
            if isinstance(el, TransportSegment):
                for omega, delta, dt in transport_drive(el, options, base):
                    _check_series(omega, delta)
                    u_total = chain_product(step_unitaries(omega, delta, el.phase + phase, dt)) @ u_total
            elif isinstance(el, StaticPulse):
                if el.rabi > 0 and el.theta != 0:
                    u = step_unitaries(el.rabi, el.detuning + base, el.phase + phase, el.duration)
                    u_total = u @ u_total
            elif isinstance(el, PhaseShift):
                phase += el.phi
            elif isinstance(el, TransferPulse):
                pass
            else:
                raise InvalidArgument(f"unknown element type {type(el).__name__}")
        except (InvalidArgument, ValueError) as exc:
            raise SequencingError(str(exc), element=i) from exc
    state = QubitState(_renormalize(u_total @ initial.amplitudes))
    return SequenceResult(state, u_total)


def run_sequence_batch(initial: QubitState, elements, base_detunings,
                       options: SequenceOptions | None = None) -> np.ndarray:
    """Up-state populations for an array of base detunings (frequency scans)."""
    base = np.asarray(base_detunings, dtype=float)
    options = options or SequenceOptions()
    u_total = np.broadcast_to(IDENTITY, base.shape + (2, 2)).copy()
    phase = 0.0
    for i, el in enumerate(elements):
        try:
            if isinstance(el, TransportSegment):
                for omega, delta, dt in transport_drive(el, options, base):
                    # (n, B) -> (B, n) so the time axis sits at -3 after adding (2, 2)
                    d = np.moveaxis(delta, 0, -1)
                    u = step_unitaries(omega, d, el.phase + phase, dt)
                    u_total = chain_product(u) @ u_total
            elif isinstance(el, StaticPulse):
                if el.rabi > 0 and el.theta != 0:
                    u = step_unitaries(el.rabi, el.detuning + base, el.phase + phase, el.duration)
                    u_total = u @ u_total
            elif isinstance(el, PhaseShift):
                phase += el.phi
        except (InvalidArgument, ValueError) as exc:
            raise SequencingError(str(exc), element=i) from exc
    psi = _renormalize(u_total @ initial.amplitudes)
    return np.abs(psi[..., 0]) ** 2


def segment_unitary(segment: TransportSegment, options: SequenceOptions | None = None) -> np.ndarray:
    return run_sequence(QubitState.up(), [segment], options).unitary
