"""Inverse problems: velocity for a target rotation, Doppler nulling, detuning budgets."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .beams import BeamGeometry, rabi_at_position
from .dynamics import (ConstantVelocity, QubitState, SequenceOptions, TransportSegment,
                       average_fidelity, chain_product, rotation_unitary, run_sequence,
                       segment_unitary, step_unitaries, transport_drive)
from .errors import BracketError, InvalidArgument
from .fitting import fit_scan
from .measurement import IDEAL_SPAM, SHOTS_PARALLEL, IonSetup, Scenario, ScanSpec, SpamModel, run_scan

logger = logging.getLogger(__name__)

VELOCITY_RTOL = 1e-8
VERIFY_MIN_FIDELITY = 0.9999
TAIL = 6.0  # transit half-length in units of w0 / (sqrt(p) sin(theta)); Omega/Omega_pk = exp(-36)


@dataclass
class CalibrationReport:
    quantity: str
    value: float
    unit: str
    residual: float
    iterations: int
    method: str
    converged: bool = True
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"quantity": self.quantity, "value": float(self.value), "unit": self.unit,
               "residual": float(self.residual), "iterations": int(self.iterations),
               "method": self.method, "converged": bool(self.converged)}
        if self.details:
            out["details"] = self.details
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def transit_half_length(beam: BeamGeometry, tail: float = TAIL) -> float:
    """Distance from the beam centre beyond which the drive is negligible."""
    return tail / beam.axial_decay


def pulse_area(beam: BeamGeometry, v: float, z_range: tuple | None = None) -> float:
    """Rotation angle ``int Omega dt`` for a constant-velocity transit.

    The full transit (``z_range=None``) runs from far before to far after
    the beam; otherwise only ``z_range`` is integrated.
    """
    if v == 0:
        raise InvalidArgument("velocity must be non-zero")
    if beam.peak_rabi == 0:
        return 0.0
    if z_range is None:
        lo, hi = -np.inf, np.inf
        points = None
    else:
        lo, hi = sorted(float(z) for z in z_range)
        points = [beam.center] if lo < beam.center < hi else None
    # integrate in units of the axial decay length to keep quad well scaled
    scale = 1.0 / beam.axial_decay
    f = lambda u: float(rabi_at_position(beam, beam.center + u * scale))
    a = (lo - beam.center) / scale
    b = (hi - beam.center) / scale
    if points is not None:
        val = quad(f, a, 0.0, epsabs=0, epsrel=1e-12, limit=200)[0] + \
            quad(f, 0.0, b, epsabs=0, epsrel=1e-12, limit=200)[0]
    else:
        val = quad(f, a, b, epsabs=0, epsrel=1e-12, limit=200)[0]
    return val * scale / abs(v)


def pulse_area_analytic(beam: BeamGeometry, v: float) -> float:
    """``Omega_pk w0 sqrt(pi / p) / (|v| sin theta)`` for an infinite transit."""
    return (beam.peak_rabi * beam.waist * np.sqrt(np.pi / beam.profile_exponent)
            / (abs(v) * abs(np.sin(beam.angle))))


def _bare(beam: BeamGeometry) -> BeamGeometry:
    return replace(beam, stark_offset=0.0, misalignment=0.0)


def transit_segment(beam: BeamGeometry, v: float, tail: float = TAIL, **kwargs) -> TransportSegment:
    """Constant-velocity pass centred on ``beam``, long enough that the ends are dark."""
    L = transit_half_length(beam, tail)
    z0, z1 = (beam.center - L, beam.center + L) if v > 0 else (beam.center + L, beam.center - L)
    return TransportSegment(ConstantVelocity(z0, z1, v), (beam,), **kwargs)


def verify_rotation(beam: BeamGeometry, v: float, theta: float,
                    options: SequenceOptions | None = None) -> float:
    """``|<R(theta)|up> | psi>|^2`` after a resonant transit at ``v``."""
    seg = transit_segment(_bare(beam), v)
    psi = run_sequence(QubitState.up(), [seg], options).state.amplitudes
    target = rotation_unitary(theta, 0.0) @ QubitState.up().amplitudes
    return float(abs(np.vdot(target, psi)) ** 2)


def solve_velocity(beam: BeamGeometry, theta_target: float, bracket=(0.01, 100.0),
                   verify: bool = True) -> CalibrationReport:
    """Transport speed whose resonant transit area equals ``theta_target``."""
    if theta_target <= 0:
        raise InvalidArgument("target rotation must be positive")
    v_lo, v_hi = sorted(abs(float(v)) for v in bracket)
    if v_lo <= 0:
        raise InvalidArgument("velocity bracket must exclude zero")
    f = lambda v: pulse_area(beam, v) - theta_target
    f_lo, f_hi = f(v_lo), f(v_hi)
    if np.sign(f_lo) == np.sign(f_hi):
        raise BracketError(f"bracket [{v_lo:.6g}, {v_hi:.6g}] m/s gives areas "
                           f"[{f_lo + theta_target:.6g}, {f_hi + theta_target:.6g}] rad, "
                           f"not enclosing {theta_target:.6g} rad")
    v, info = brentq(f, v_lo, v_hi, xtol=1e-15, rtol=VELOCITY_RTOL / 10, full_output=True)
    residual = f(v) / theta_target
    details = {"bracket": [v_lo, v_hi], "theta_target": float(theta_target)}
    converged = bool(info.converged)
    if verify:
        fid = verify_rotation(beam, v, theta_target)
        details["verified_fidelity"] = fid
        if fid < VERIFY_MIN_FIDELITY:
            logger.warning("propagated fidelity %.6f below %.4f", fid, VERIFY_MIN_FIDELITY)
            converged = False
    return CalibrationReport("velocity", float(v), "m/s", float(residual), info.iterations,
                             "brentq", converged, details)


def deduce_velocity(chi_fit: float, waist: float) -> float:
    """``v = sqrt(2) w0 chi``, the relation quoted alongside the transit fit."""
    if chi_fit < 0 or waist < 0:
        raise InvalidArgument("chi and waist must be non-negative")
    return float(np.sqrt(2.0) * waist * chi_fit)


def gate_unitary(beam: BeamGeometry, v: float, detuning: float = 0.0,
                 options: SequenceOptions | None = None) -> np.ndarray:
    """Transit unitary with a constant detuning, in the frame of that detuning.

    The free precession ``exp(-i delta t sigma_z / 2)`` is removed relative
    to the moment the ion crosses the beam centre, so the result no longer
    depends on how far before and after the beam the integration runs.
    """
    opts = replace(options or SequenceOptions(), base_detuning=float(detuning))
    seg = transit_segment(_bare(beam), v)
    u = segment_unitary(seg, opts)
    half = 0.5 * seg.trajectory.duration
    frame = np.diag(np.exp(0.5j * detuning * half * np.array([1.0, -1.0])))
    return frame @ u @ frame


def stark_unitary(beam: BeamGeometry, detuning: float, v: float,
                  options: SequenceOptions | None = None) -> np.ndarray:
    """Transit unitary when the detuning is a light shift of the beam itself.

    The shift follows the local intensity, ``delta(t) = detuning * I(t) / I_pk``,
    so it vanishes outside the beam and no free-precession frame enters.
    """
    options = options or SequenceOptions()
    beam = _bare(beam)
    seg = transit_segment(beam, v)
    pieces = transport_drive(seg, options, 0.0)
    u = np.eye(2, dtype=complex)
    for omega, _, dt in pieces:
        rel = omega / beam.peak_rabi if beam.peak_rabi > 0 else np.zeros_like(omega)
        delta = detuning * rel ** (2.0 / beam.profile_exponent)
        u = chain_product(step_unitaries(omega, delta, 0.0, dt)) @ u
    return u


def stark_fidelity(beam: BeamGeometry, detuning: float, theta_target: float, v: float,
                   shape: str = "intensity", options: SequenceOptions | None = None) -> float:
    """Average gate fidelity of a detuned transit against ``R(theta_target, 0)``.

    ``shape="intensity"`` scales the detuning with the local beam intensity
    (an AC Stark shift); ``shape="constant"`` applies it everywhere and
    compares in the frame of the detuning (see :func:`gate_unitary`).
    """
    if shape == "intensity":
        u = stark_unitary(beam, detuning, v, options)
    elif shape == "constant":
        u = gate_unitary(beam, v, detuning, options)
    else:
        raise InvalidArgument(f"unknown detuning shape {shape!r}")
    return average_fidelity(u, rotation_unitary(theta_target, 0.0))


def stark_report(beam: BeamGeometry, detuning: float, theta_target: float,
                 shape: str = "intensity") -> CalibrationReport:
    cal = solve_velocity(beam, theta_target)
    fid = stark_fidelity(beam, detuning, theta_target, cal.value, shape)
    return CalibrationReport("average_fidelity", fid, "", 1.0 - fid, cal.iterations,
                             f"transit propagation, {shape} detuning", cal.converged,
                             {"velocity_m_s": cal.value, "detuning_rad_s": float(detuning),
                              "theta_target": float(theta_target)})


# --- Doppler nulling ------------------------------------------------------------

@dataclass
class DopplerNullResult:
    alpha: float  # rad
    sigma: float
    f_forward: float  # Hz
    f_reverse: float
    fits: tuple = field(repr=False)
    scans: tuple = field(repr=False)

    def report(self) -> CalibrationReport:
        return CalibrationReport(
            "misalignment", self.alpha, "rad", self.sigma, max(f.iterations for f in self.fits),
            "gaussian fits of forward/reverse frequency scans",
            all(f.converged for f in self.fits),
            {"f_forward_hz": self.f_forward, "f_reverse_hz": self.f_reverse,
             "alpha_sigma_rad": self.sigma})


def doppler_null(beam: BeamGeometry, speed: float, frequencies, theta: float | None = None,
                 shots: int = SHOTS_PARALLEL, spam: SpamModel = IDEAL_SPAM, seed: int = 0,
                 options: SequenceOptions | None = None, threads: int = 1) -> DopplerNullResult:
    """Estimate the Raman-beam misalignment hidden in ``beam.misalignment``.

    The ion crosses the beam at ``speed`` in both directions.  Only the
    Doppler term changes sign, so the separation of the two fitted line
    centres is ``2 k alpha |v| / 2 pi`` and ``alpha = pi df / (k |v|)``.
    With ``theta`` given the transit uses that pulse area, otherwise the
    speed is taken as is.
    """
    speed = abs(float(speed))
    if speed == 0:
        raise InvalidArgument("speed must be non-zero")
    if theta is not None:
        # scale the drive so this speed delivers the requested area
        beam = replace(beam, peak_rabi=beam.peak_rabi * theta / pulse_area(beam, speed))
    options = options or SequenceOptions()
    grid = np.asarray(frequencies, dtype=float)
    fits, scans, centers = [], [], []
    for k, v in enumerate((speed, -speed)):
        ion = IonSetup("forward" if v > 0 else "reverse", (transit_segment(beam, v),))
        scen = Scenario((ion,), spam, options, seed)
        scan = run_scan(scen, ScanSpec("frequency", grid, shots, scan_index=k), threads)[0]
        fit = fit_scan("gaussian", scan)
        fits.append(fit)
        scans.append(scan)
        centers.append((fit["x0"], fit.sigma("x0")))
    (f_fwd, s_fwd), (f_rev, s_rev) = centers
    kk = beam.wavenumber * speed
    alpha = np.pi * (f_fwd - f_rev) / kk
    sigma = np.pi * np.hypot(s_fwd, s_rev) / kk
    return DopplerNullResult(float(alpha), float(sigma), f_fwd, f_rev, tuple(fits), tuple(scans))
