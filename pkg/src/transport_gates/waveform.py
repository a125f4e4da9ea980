"""Electrode waveforms that move harmonic wells along planned trajectories.

Per AWG sample the voltages are the solution of a box-constrained least
squares problem: inside a window around each well target, the potential
should match a parabola of the requested frequency, up to a free per-well
offset.  Voltage limits and the per-sample slew limit are hard bounds; the
previous sample's solution warm-starts the next.  A depth penalty is added
only for samples whose realised well is shallower than requested.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.signal import lfilter

from .errors import (EscapeError, InvalidArgument, OutOfRange, SynthesisError,
                     TrackingError)
from .qp import solve_box_qp
from .trap import (ELEMENTARY_CHARGE, ElectrodeBasis, IonSpecies, Potential,
                   _barrier)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 1e6
DEFAULT_VMAX = 10.0
DEFAULT_SLEW = 1e6
DEFAULT_WINDOW = 30e-6
DEFAULT_RAMP = 5e-6
DEFAULT_CUTOFF = 50e3

KKT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TrajectoryPlan:
    """Target well positions ``positions[k, n]`` at uniformly spaced ``times``."""

    times: np.ndarray
    positions: np.ndarray
    omega: np.ndarray  # rad/s per well
    depth: np.ndarray  # eV per well
    window: float = DEFAULT_WINDOW

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        n_wells = pos.shape[0]
        omega = np.broadcast_to(np.asarray(self.omega, dtype=float), (n_wells,)).copy()
        depth = np.broadcast_to(np.asarray(self.depth, dtype=float), (n_wells,)).copy()
        if pos.shape[1] != times.size:
            raise InvalidArgument("one target position per timestamp required")
        if times.size > 1:
            dt = np.diff(times)
            if not (np.all(dt > 0) and np.allclose(dt, dt[0], rtol=1e-9, atol=0)):
                raise InvalidArgument("timestamps must be uniform and increasing")
        if np.any(omega <= 0):
            raise InvalidArgument("target frequencies must be positive")
        if self.window <= 0:
            raise InvalidArgument("window half-width must be positive")
        if n_wells > 1:
            order = np.argsort(pos[:, 0])
            pos, omega, depth = pos[order], omega[order], depth[order]
            gaps = np.diff(pos, axis=0)
            if np.any(gaps <= 2 * self.window):
                raise InvalidArgument("wells must stay more than two window widths apart")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "depth", depth)

    @property
    def n_wells(self) -> int:
        return self.positions.shape[0]

    @property
    def n_samples(self) -> int:
        return self.times.size

    @property
    def sample_rate(self) -> float:
        if self.times.size < 2:
            return np.inf
        return 1.0 / (self.times[1] - self.times[0])

    @classmethod
    def combine(cls, plans, window=None) -> "TrajectoryPlan":
        """Run several single-well plans simultaneously; shorter ones hold their end point."""
        rates = {round(p.sample_rate, 6) for p in plans if p.n_samples > 1}
        if len(rates) > 1:
            raise InvalidArgument("plans use different sample rates")
        longest = max(plans, key=lambda p: p.n_samples)
        n = longest.n_samples
        rows, omega, depth = [], [], []
        for p in plans:
            for k in range(p.n_wells):
                row = np.full(n, p.positions[k, -1])
                row[:p.n_samples] = p.positions[k]
                rows.append(row)
                omega.append(p.omega[k])
                depth.append(p.depth[k])
        return cls(longest.times, np.array(rows), np.array(omega), np.array(depth),
                   window=window if window is not None else min(p.window for p in plans))


def _ramp_profile(t, t_ramp, v):
    """Distance travelled by ``t`` under a sine-squared acceleration ramp to speed ``v``."""
    return v * (t / 2.0 - t_ramp / (2.0 * np.pi) * np.sin(np.pi * t / t_ramp))


def plan_positions(t, z_start, z_end, velocity, ramp):
    """Position at times ``t`` for ramp / constant-velocity / ramp motion."""
    t = np.asarray(t, dtype=float)
    dist = abs(z_end - z_start)
    speed = abs(velocity)
    sign = np.sign(z_end - z_start)
    if dist == 0:
        return np.full_like(t, z_start)
    total = dist / speed + ramp
    s = np.empty_like(t)
    if ramp > 0:
        up = t < ramp
        down = t > total - ramp
        mid = ~(up | down)
        s[up] = _ramp_profile(t[up], ramp, speed)
        s[mid] = speed * ramp / 2 + speed * (t[mid] - ramp)
        td = np.clip(total - t[down], 0.0, None)
        s[down] = dist - _ramp_profile(td, ramp, speed)
    else:
        s = speed * t
    s = np.clip(s, 0.0, dist)
    s[t >= total] = dist
    return z_start + sign * s


def plan_trajectory(z_start: float, z_end: float, velocity: float, omega: float,
                    depth: float = 0.0, sample_rate: float = DEFAULT_SAMPLE_RATE,
                    ramp: float = DEFAULT_RAMP, window: float = DEFAULT_WINDOW) -> TrajectoryPlan:
    """Single-well transport at constant ``velocity`` between sine-squared ramps.

    Total duration is ``|z_end - z_start| / |v| + ramp``: each ramp covers
    ``|v| * ramp / 2`` of the distance.
    """
    if ramp < 0:
        raise InvalidArgument("ramp duration must be non-negative")
    if sample_rate <= 0:
        raise InvalidArgument("sample rate must be positive")
    dz = z_end - z_start
    if dz == 0:
        return TrajectoryPlan(np.zeros(1), np.array([[z_start]]), omega, depth, window)
    if velocity == 0 or np.sign(velocity) != np.sign(dz):
        raise InvalidArgument("velocity must be non-zero and point from z_start to z_end")
    speed = abs(velocity)
    constant_time = abs(dz) / speed - ramp
    if constant_time < 0:
        raise InvalidArgument("transport too short for the requested ramps")
    if constant_time * sample_rate < 10:
        raise InvalidArgument(
            f"sample rate {sample_rate:g} Hz gives fewer than 10 samples in the constant segment")
    total = abs(dz) / speed + ramp
    n = int(np.ceil(total * sample_rate - 1e-9)) + 1
    t = np.arange(n) / sample_rate
    return TrajectoryPlan(t, plan_positions(t, z_start, z_end, velocity, ramp)[None, :],
                          omega, depth, window)


@dataclass(frozen=True, eq=False)
class SynthesisReport:
    residual: np.ndarray  # per sample, rms window mismatch relative to the target parabola
    kkt: np.ndarray
    iterations: np.ndarray
    depth_shortfall: np.ndarray  # (n_wells, n_samples) eV, >0 where still too shallow
    unreachable: tuple = ()  # sample indices whose curvature target could not be met

    @property
    def ok(self) -> bool:
        return not self.unreachable and bool(np.all(self.kkt < KKT_TOL))


@dataclass(frozen=True, eq=False)
class VoltageWaveform:
    sample_rate: float
    samples: np.ndarray  # (n_samples, n_channels) V
    vmax: float = DEFAULT_VMAX
    slew: float = DEFAULT_SLEW  # V/s
    report: SynthesisReport | None = field(default=None, repr=False)

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.samples, dtype=float))
        object.__setattr__(self, "samples", s)
        if self.sample_rate <= 0:
            raise InvalidArgument("sample rate must be positive")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.shape[0]) / self.sample_rate

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def max_step(self) -> float:
        return self.slew / self.sample_rate

    def constraint_violations(self) -> tuple[int, int]:
        """Counts of (box, slew) violations; both zero for a valid waveform."""
        box = int(np.count_nonzero(np.abs(self.samples) > self.vmax))
        steps = np.abs(np.diff(self.samples, axis=0))
        slew = int(np.count_nonzero(steps > self.max_step))
        return box, slew


def _raised_cosine(u):
    return 0.5 * (1.0 + np.cos(np.pi * u))


def _nudge_into(v, lo, hi, vprev, max_step):
    """Clip and, where rounding still breaks the slew test, step one ulp inward."""
    v = np.clip(v, lo, hi)
    if vprev is None:
        return v
    for _ in range(4):
        over = np.abs(v - vprev) > max_step
        if not over.any():
            break
        v[over] = np.nextafter(v[over], vprev[over])
    return v


class _WindowProblem:
    """Least-squares rows for all wells at one sample."""

    def __init__(self, basis, species, plan, n_points=61):
        self.basis = basis
        self.plan = plan
        self.u = np.linspace(-1.0, 1.0, n_points)
        self.sqrt_w = np.sqrt(_raised_cosine(self.u))
        self.half_curv = species.mass * plan.omega**2 / (2.0 * species.charge)  # V/m^2

    def rows(self, n):
        plan = self.plan
        K = self.basis.n_channels
        blocks, rhs = [], []
        for k in range(plan.n_wells):
            z0 = plan.positions[k, n]
            dz = plan.window * self.u
            A = self.basis.channel_matrix(z0 + dz)
            off = np.zeros((dz.size, plan.n_wells))
            off[:, k] = -1.0
            blocks.append(self.sqrt_w[:, None] * np.hstack([A, off]))
            rhs.append(self.sqrt_w * self.half_curv[k] * dz**2)
        A = np.vstack(blocks)
        b = np.concatenate(rhs)
        assert A.shape[1] == K + plan.n_wells
        return A, b


def _local_well(pot: Potential, species: IonSpecies, z_guess: float, radius: float,
                depth_radius: float):
    """Minimum of ``pot`` nearest ``z_guess`` within ``radius``; ``None`` if absent.

    Returns ``(z, omega, depth_eV)`` with depth measured against barriers
    inside ``z_guess +- depth_radius`` (edge value on an open side).
    """
    lo_span, hi_span = pot.basis.span
    lo = max(z_guess - radius, lo_span)
    hi = min(z_guess + radius, hi_span)
    grid = pot.basis.grid
    i0 = max(int(np.searchsorted(grid, lo)) - 1, 0)
    i1 = min(int(np.searchsorted(grid, hi)) + 1, grid.size - 1)
    zs = grid[i0:i1 + 1]
    slopes = np.array([pot.slope_at(z) for z in zs])
    cross = np.flatnonzero((slopes[:-1] < 0) & (slopes[1:] >= 0))
    if cross.size == 0:
        return None
    j = cross[np.argmin(np.abs(zs[cross] - z_guess))]
    a, b = zs[j], zs[j + 1]
    z = b if slopes[j + 1] == 0 else pot.stationary_point(a, b)
    curv = pot.curvature_at(z)
    if curv <= 0:
        return None
    omega = float(np.sqrt(species.charge * curv / species.mass))
    d_lo = max(z - depth_radius, lo_span)
    d_hi = min(z + depth_radius, hi_span)
    v_min = pot.value_at(z)
    left = _barrier(pot, grid, d_lo, z, pot.value_at(d_lo))
    right = _barrier(pot, grid, z, d_hi, pot.value_at(d_hi))
    depth = max(min(left, right) - v_min, 0.0) * species.charge / ELEMENTARY_CHARGE
    return z, omega, depth


def synthesize_waveform(basis: ElectrodeBasis, plan: TrajectoryPlan, species: IonSpecies,
                        vmax: float = DEFAULT_VMAX, slew: float = DEFAULT_SLEW,
                        regularization: float = 1e-9, depth_radius: float = 300e-6,
                        depth_penalty: float = 1.0, residual_limit: float = 0.05,
                        initial=None) -> VoltageWaveform:
    """Voltages realising ``plan`` sample by sample.

    ``regularization`` is a ridge weight on the channel voltages, relative
    to the mean diagonal of the window normal matrix; it only selects among
    near-degenerate solutions.  ``residual_limit`` is the relative rms window
    mismatch above which a sample is reported as unreachable.
    """
    if vmax < 0 or slew < 0:
        raise SynthesisError("voltage and slew limits must be non-negative", timestep=0)
    lo_span, hi_span = basis.span
    if np.any(plan.positions - plan.window < lo_span) or np.any(plan.positions + plan.window > hi_span):
        raise OutOfRange("plan leaves the basis span")
    K = basis.n_channels
    W = plan.n_wells
    N = plan.n_samples
    rate = plan.sample_rate if N > 1 else DEFAULT_SAMPLE_RATE
    max_step = slew / rate
    prob = _WindowProblem(basis, species, plan)

    out = np.zeros((N, K))
    residual = np.zeros(N)
    kkt = np.zeros(N)
    iters = np.zeros(N, dtype=int)
    shortfall = np.zeros((W, N))
    unreachable = []

    x = np.zeros(K + W)
    if initial is not None:
        x[:K] = initial
    act_lo = act_hi = None
    vprev = None
    for n in range(N):
        A, b = prob.rows(n)
        lower = np.full(K + W, -np.inf)
        upper = np.full(K + W, np.inf)
        lower[:K], upper[:K] = -vmax, vmax
        if vprev is not None:
            lower[:K] = np.maximum(lower[:K], vprev - max_step)
            upper[:K] = np.minimum(upper[:K], vprev + max_step)
        if np.any(lower > upper):
            raise SynthesisError("voltage box and slew limits are incompatible", timestep=n)

        H0 = A.T @ A
        g0 = -A.T @ b
        ridge = regularization * np.trace(H0[:K, :K]) / K
        H = H0.copy()
        H[np.arange(K), np.arange(K)] += ridge
        # offsets are free but need a tiny ridge when a window has no signal
        H[np.arange(K, K + W), np.arange(K, K + W)] += 1e-30 + 1e-12 * np.abs(H0).max(initial=0.0)
        res = solve_box_qp(H, g0, lower, upper, x0=x, active_lower=act_lo,
                           active_upper=act_hi, tol=KKT_TOL)
        x = res.x

        # depth penalty, only where the realised well is too shallow
        penalty = 0.0
        for _ in range(6):
            pot = basis.potential(x[:K])
            deficits = []
            for k in range(W):
                if plan.depth[k] <= 0:
                    deficits.append(0.0)
                    continue
                info = _local_well(pot, species, plan.positions[k, n], plan.window, depth_radius)
                got = 0.0 if info is None else info[2]
                deficits.append(plan.depth[k] - got)
            if max(deficits) <= 0:
                break
            penalty = depth_penalty if penalty == 0 else 10 * penalty
            Hp, gp = H.copy(), g0.copy()
            for k in range(W):
                if deficits[k] <= 0:
                    continue
                r = np.sqrt(2 * plan.depth[k] * ELEMENTARY_CHARGE
                            / (species.mass * plan.omega[k] ** 2))
                r = min(max(r, 1.5 * plan.window), depth_radius)
                target_v = plan.depth[k] * ELEMENTARY_CHARGE / species.charge
                for side in (-1.0, 1.0):
                    zb = np.clip(plan.positions[k, n] + side * r, lo_span, hi_span)
                    row = np.zeros(K + W)
                    row[:K] = basis.channel_matrix([zb])[0]
                    row[K + k] = -1.0
                    w = penalty * np.trace(H0) / (K + W)
                    # hinge: only push the barrier up toward the target height
                    Hp += w * np.outer(row, row)
                    gp -= w * row * target_v
            res = solve_box_qp(Hp, gp, lower, upper, x0=x, tol=KKT_TOL)
            x = res.x
        shortfall[:, n] = np.maximum(deficits, 0.0)

        v = _nudge_into(x[:K].copy(), lower[:K], upper[:K], vprev, max_step)
        x[:K] = v
        out[n] = v
        vprev = v
        act_lo, act_hi = res.active_lower, res.active_upper
        kkt[n] = res.kkt
        iters[n] = res.iterations
        mismatch = A @ x - b
        scale = np.linalg.norm(b)
        residual[n] = np.linalg.norm(mismatch) / scale if scale > 0 else 0.0
        if residual[n] > residual_limit or not res.converged:
            unreachable.append(n)

    report = SynthesisReport(residual, kkt, iters, shortfall, tuple(unreachable))
    if unreachable:
        logger.warning("curvature target unreachable at %d of %d samples (first: %d, "
                       "relative residual %.3g)", len(unreachable), N, unreachable[0],
                       residual[unreachable[0]])
    return VoltageWaveform(rate, out, vmax, slew, report)


# --- output filtering ---------------------------------------------------------

@dataclass(frozen=True)
class FilterModel:
    cutoff: float | tuple = DEFAULT_CUTOFF  # Hz, scalar or per channel
    order: int = 1

    def __post_init__(self):
        if np.any(np.asarray(self.cutoff, dtype=float) <= 0):
            raise InvalidArgument("filter cutoff must be positive")
        if int(self.order) != self.order or self.order < 1:
            raise InvalidArgument("filter order must be a positive integer")


def apply_filter(waveform: VoltageWaveform, filt: FilterModel) -> VoltageWaveform:
    """Cascade of RC stages sampled exactly: ``y[n] = a y[n-1] + (1-a) x[n]``.

    Each stage starts in steady state at the first sample.
    """
    x = waveform.samples
    dt = 1.0 / waveform.sample_rate
    fc = np.broadcast_to(np.asarray(filt.cutoff, dtype=float), (x.shape[1],))
    a = np.exp(-2.0 * np.pi * fc * dt)
    y = x.copy()
    for ch in range(x.shape[1]):
        col = y[:, ch]
        for _ in range(filt.order):
            col = lfilter([1.0 - a[ch]], [1.0, -a[ch]], col, zi=[a[ch] * col[0]])[0]
        y[:, ch] = col
    return VoltageWaveform(waveform.sample_rate, y, waveform.vmax, waveform.slew)


# --- realised trajectories ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class RealizedTrajectory:
    times: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    omega: np.ndarray
    depth: np.ndarray

    @classmethod
    def from_positions(cls, times, position, omega=None, depth=None):
        times = np.asarray(times, dtype=float)
        position = np.asarray(position, dtype=float)
        velocity = np.gradient(position, times) if position.size > 1 else np.zeros(1)
        nan = np.full(position.shape, np.nan)
        return cls(times, position, velocity,
                   nan if omega is None else np.asarray(omega, float),
                   nan if depth is None else np.asarray(depth, float))


def realized_trajectory(basis: ElectrodeBasis, waveform: VoltageWaveform, species: IonSpecies,
                        seed_position: float, search_radius: float = 10e-6,
                        max_radius: float = 200e-6,
                        depth_radius: float = 300e-6) -> RealizedTrajectory:
    """Follow the well containing ``seed_position`` through every sample."""
    N = waveform.samples.shape[0]
    z = np.zeros(N)
    omega = np.zeros(N)
    depth = np.zeros(N)
    guess = seed_position
    for n in range(N):
        pot = basis.potential(waveform.samples[n])
        radius = search_radius
        info = None
        while radius <= max_radius:
            try:
                info = _local_well(pot, species, guess, radius, depth_radius)
            except OutOfRange:
                info = None
            if info is not None:
                break
            radius *= 2
        if info is None:
            raise TrackingError("well minimum lost", timestep=n)
        z[n], omega[n], depth[n] = info
        guess = z[n]
    times = waveform.times
    velocity = np.gradient(z, times) if N > 1 else np.zeros(1)
    return RealizedTrajectory(times, z, velocity, omega, depth)


@dataclass(frozen=True, eq=False)
class IonPath:
    times: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    well_position: np.ndarray
    energy: np.ndarray  # J, kinetic + q * Phi at the interpolated voltages
    max_deviation: float


def _interval_polynomials(waveform: VoltageWaveform, interpolation: str):
    """Per-interval voltage polynomials ``V(t_k + tau) = sum_j coef[j] tau**j``."""
    samples = waveform.samples
    dt = 1.0 / waveform.sample_rate
    N = samples.shape[0]
    if N == 1 or not np.any(samples != samples[0]):
        return [(0.0, (N - 1) * dt, [samples[0]])]
    if interpolation == "linear":
        slopes = np.diff(samples, axis=0) / dt
        return [(k * dt, (k + 1) * dt, [samples[k], slopes[k]]) for k in range(N - 1)]
    if interpolation == "cubic":
        c = CubicSpline(np.arange(N) * dt, samples, axis=0).c  # (4, N-1, K), highest power first
        return [(k * dt, (k + 1) * dt, [c[3, k], c[2, k], c[1, k], c[0, k]]) for k in range(N - 1)]
    raise InvalidArgument(f"unknown interpolation {interpolation!r}")


class _TimePotential:
    """Potential whose voltages are a polynomial in the time since interval start."""

    def __init__(self, basis, coefs):
        self.pots = [basis.potential(c) for c in coefs]

    def slope(self, z, tau):
        acc = 0.0
        for p in reversed(self.pots):
            acc = acc * tau + p.slope_at(z)
        return acc

    def value(self, z, tau):
        acc = 0.0
        for p in reversed(self.pots):
            acc = acc * tau + p.value_at(z)
        return acc

    def curvature(self, z, tau):
        acc = 0.0
        for p in reversed(self.pots):
            acc = acc * tau + p.curvature_at(z)
        return acc


def track_classical_ion(basis: ElectrodeBasis, waveform: VoltageWaveform, species: IonSpecies,
                        z0: float, v0: float = 0.0, oversample: int = 4,
                        rtol: float = 1e-9, interpolation: str = "cubic") -> IonPath:
    """Integrate ``m z'' = -q dPhi/dz`` through the waveform.

    Between AWG samples the voltages follow a cubic spline through the
    samples (``interpolation="linear"`` for straight segments).  Piecewise
    linear voltages move the well with a velocity kink at every sample;
    when the sample period is a multiple of the trap period the kicks add
    up coherently, which the smooth reconstruction avoids.
    """
    q, m = species.charge, species.mass
    lo_span, hi_span = basis.span
    dt = 1.0 / waveform.sample_rate
    state = np.array([z0, v0], dtype=float)
    atol = np.array([1e-16, 1e-10])
    well_guess = z0
    t_out, z_out, v_out, well_out, e_out = [], [], [], [], []

    def well_at(tp, tau, guess):
        f = lambda z: tp.slope(z, tau)
        r = 5e-6
        while r <= 200e-6:
            lo, hi = max(guess - r, lo_span), min(guess + r, hi_span)
            zs = np.linspace(lo, hi, 41)
            sl = np.array([f(x) for x in zs])
            cross = np.flatnonzero((sl[:-1] < 0) & (sl[1:] >= 0))
            if cross.size:
                j = cross[np.argmin(np.abs(zs[cross] - guess))]
                if sl[j + 1] == 0:
                    return zs[j + 1]
                return brentq(f, zs[j], zs[j + 1], xtol=1e-15, rtol=8.9e-16)
            r *= 2
        raise TrackingError("well minimum lost during ion tracking")

    for t_a, t_b, coefs in _interval_polynomials(waveform, interpolation):
        tp = _TimePotential(basis, coefs)
        span = t_b - t_a

        def rhs(t, y, tp=tp, t_a=t_a):
            # rejected trial stages may probe outside the grid; accepted states are checked below
            z = min(max(y[0], lo_span), hi_span)
            return [y[1], -q * tp.slope(z, t - t_a) / m]

        zc = min(max(state[0], lo_span), hi_span)
        curv = tp.curvature(zc, 0.0)
        period = 2 * np.pi / np.sqrt(q * curv / m) if curv > 0 else max(span, dt)
        # resolve the secular oscillation, not just the AWG samples
        n_pts = max(int(round(span / dt * oversample)), int(np.ceil(16 * span / period)), 1)
        t_eval = t_a + span * np.arange(n_pts + 1) / n_pts
        if span > 0:
            sol = solve_ivp(rhs, (t_a, t_b), state, method="DOP853", t_eval=t_eval,
                            rtol=rtol, atol=atol, first_step=min(span, period / 100))
            if sol.status < 0:
                raise EscapeError(f"integration failed: {sol.message}", time=t_a)
            ys = sol.y
        else:
            ys = state[:, None]
            t_eval = np.array([t_a])
        start = 0 if not t_out else 1
        for i in range(start, ys.shape[1]):
            t = t_eval[i]
            zc, vc = ys[0, i], ys[1, i]
            if not lo_span <= zc <= hi_span:
                raise EscapeError("ion left the basis span", time=t)
            well_guess = well_at(tp, t - t_a, well_guess)
            t_out.append(t)
            z_out.append(zc)
            v_out.append(vc)
            well_out.append(well_guess)
            e_out.append(0.5 * m * vc**2 + q * tp.value(zc, t - t_a))
        state = ys[:, -1].copy()

    z_out = np.array(z_out)
    well_out = np.array(well_out)
    return IonPath(np.array(t_out), z_out, np.array(v_out), well_out, np.array(e_out),
                   float(np.max(np.abs(z_out - well_out))))
