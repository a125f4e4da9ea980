"""Axial trap potential built from per-electrode basis functions.

Each electrode contributes ``phi_i(z)`` volts per applied volt on a fixed
axial grid.  Potentials are superpositions of these, interpolated with a
not-a-knot cubic spline; slopes and curvatures come from the same spline
so that stationary points found on the slope are consistent with the
interpolated potential.
"""
from __future__ import annotations

import bisect
import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import BasisParseError, InvalidArgument, OutOfRange

logger = logging.getLogger(__name__)

ELEMENTARY_CHARGE = 1.602176634e-19

#: |slope| target (V/m) for refined well positions
STATIONARY_TOL = 1e-9


@dataclass(frozen=True)
class IonSpecies:
    mass: float
    charge: float
    name: str = ""

    def __post_init__(self):
        if not (self.mass > 0 and self.charge > 0):
            raise InvalidArgument("ion mass and charge must be strictly positive")


BERYLLIUM_9 = IonSpecies(mass=1.4965e-26, charge=1.602e-19, name="9Be+")


@dataclass(frozen=True)
class Well:
    position: float  # m
    omega: float  # rad/s
    depth: float  # eV
    curvature: float  # q * Phi'' in J/m^2


@dataclass(frozen=True, eq=False)
class ElectrodeBasis:
    """Basis potentials ``phi[i, j] = phi_i(grid[j])`` and their derivatives.

    ``channel_map[i]`` is the AWG channel driving electrode ``i``; voltage
    vectors handed to the evaluation functions are indexed by channel.
    """

    grid: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray
    d2phi: np.ndarray
    channel_map: np.ndarray = None
    max_channels: int | None = None
    names: tuple = field(default=())

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        dphi = np.atleast_2d(np.asarray(self.dphi, dtype=float))
        d2phi = np.atleast_2d(np.asarray(self.d2phi, dtype=float))
        if grid.ndim != 1 or grid.size < 4:
            raise InvalidArgument("grid must be 1-D with at least 4 points")
        if not np.all(np.diff(grid) > 0):
            raise InvalidArgument("grid must be strictly increasing")
        shape = (phi.shape[0], grid.size)
        for name, arr in (("phi", phi), ("dphi", dphi), ("d2phi", d2phi)):
            if arr.shape != shape:
                raise InvalidArgument(
                    f"{name} has shape {arr.shape}, expected {shape}")
        n = phi.shape[0]
        if self.channel_map is None:
            cmap = np.arange(n)
        else:
            cmap = np.asarray(self.channel_map, dtype=int)
        if cmap.shape != (n,) or cmap.min() < 0:
            raise InvalidArgument("channel_map must assign a channel to every electrode")
        used = np.unique(cmap)
        if not np.array_equal(used, np.arange(used.size)):
            raise InvalidArgument("channel_map must be surjective onto 0..K-1")
        if self.max_channels is not None and used.size > self.max_channels:
            raise InvalidArgument(
                f"{used.size} channels exceed the AWG bound of {self.max_channels}")
        for name, arr in (("grid", grid), ("phi", phi), ("dphi", dphi),
                          ("d2phi", d2phi), ("channel_map", cmap)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_electrodes(self) -> int:
        return self.phi.shape[0]

    @property
    def n_channels(self) -> int:
        return int(self.channel_map.max()) + 1

    @property
    def span(self) -> tuple[float, float]:
        return float(self.grid[0]), float(self.grid[-1])

    @cached_property
    def _spline(self) -> CubicSpline:
        return CubicSpline(self.grid, self.phi, axis=1)

    @cached_property
    def _grid_list(self) -> list:
        return self.grid.tolist()

    def electrode_voltages(self, voltages) -> np.ndarray:
        v = np.asarray(voltages, dtype=float)
        if v.shape[-1] != self.n_channels:
            raise InvalidArgument(
                f"voltage vector has {v.shape[-1]} entries, basis has {self.n_channels} channels")
        return v[..., self.channel_map]

    def channel_matrix(self, z) -> np.ndarray:
        """Potential per volt on each *channel* at positions ``z``, shape (len(z), K)."""
        per_electrode = self.basis_values(z)
        out = np.zeros((per_electrode.shape[0], self.n_channels))
        np.add.at(out.T, self.channel_map, per_electrode.T)
        return out

    def basis_values(self, z, nu: int = 0) -> np.ndarray:
        """Interpolated ``phi_i^(nu)(z)``, shape (len(z), n_electrodes)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        self._check_range(z)
        return self._spline(z, nu).T

    def _check_range(self, z):
        lo, hi = self.span
        if np.any(z < lo) or np.any(z > hi):
            bad = z[(z < lo) | (z > hi)][0]
            raise OutOfRange(f"z = {bad:.6g} m outside basis span [{lo:.6g}, {hi:.6g}]")

    def potential(self, voltages) -> "Potential":
        return Potential(self, voltages)


class Potential:
    """Cubic-spline potential for one fixed voltage vector.

    Coefficients are contracted with the voltages once so that repeated
    scalar evaluation (root finding, ODE right-hand sides) stays cheap.
    """

    def __init__(self, basis: ElectrodeBasis, voltages):
        self.basis = basis
        self.voltages = np.asarray(voltages, dtype=float)
        ve = basis.electrode_voltages(self.voltages)
        c = basis._spline.c  # (4, n_intervals, n_electrodes)
        self._c = np.tensordot(c, ve, axes=([2], [0]))
        self._grid = basis._grid_list
        self._rows = [row.tolist() for row in self._c]

    def _locate(self, z):
        g = self._grid
        if z < g[0] or z > g[-1]:
            raise OutOfRange(f"z = {z:.6g} m outside basis span [{g[0]:.6g}, {g[-1]:.6g}]")
        i = bisect.bisect_right(g, z) - 1
        if i >= len(g) - 1:
            i = len(g) - 2
        return i, z - g[i]

    def value_at(self, z: float) -> float:
        i, dz = self._locate(z)
        a, b, c, d = (r[i] for r in self._rows)
        return ((a * dz + b) * dz + c) * dz + d

    def slope_at(self, z: float) -> float:
        i, dz = self._locate(z)
        a, b, c = self._rows[0][i], self._rows[1][i], self._rows[2][i]
        return (3.0 * a * dz + 2.0 * b) * dz + c

    def curvature_at(self, z: float) -> float:
        i, dz = self._locate(z)
        return 6.0 * self._rows[0][i] * dz + 2.0 * self._rows[1][i]

    def evaluate(self, z):
        """Vectorised (potential, slope, curvature) at ``z``."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        self.basis._check_range(z)
        g = self.basis.grid
        i = np.clip(np.searchsorted(g, z, side="right") - 1, 0, g.size - 2)
        dz = z - g[i]
        a, b, c, d = (self._c[k, i] for k in range(4))
        val = ((a * dz + b) * dz + c) * dz + d
        slope = (3.0 * a * dz + 2.0 * b) * dz + c
        curv = 6.0 * a * dz + 2.0 * b
        return val, slope, curv

    def node_values(self) -> np.ndarray:
        return self.basis.electrode_voltages(self.voltages) @ self.basis.phi

    def stationary_point(self, lo: float, hi: float) -> float:
        """Slope root in ``[lo, hi]`` polished to ``STATIONARY_TOL``."""
        z = brentq(self.slope_at, lo, hi, xtol=1e-18, rtol=8.9e-16, maxiter=200)
        # brentq stops on bracket width; a couple of Newton steps pin |slope|
        for _ in range(4):
            s = self.slope_at(z)
            if abs(s) < STATIONARY_TOL:
                break
            k = self.curvature_at(z)
            if k == 0:
                break
            step = z - s / k
            if not lo <= step <= hi:
                break
            z = step
        return z


def evaluate_potential(basis: ElectrodeBasis, voltages, z):
    """Potential (V), slope (V/m) and curvature (V/m^2) at ``z``."""
    val, slope, curv = basis.potential(voltages).evaluate(z)
    if np.ndim(z) == 0:
        return float(val[0]), float(slope[0]), float(curv[0])
    return val, slope, curv


def make_surrogate_basis(n_electrodes: int, pitch: float, width: float,
                         span: float | tuple[float, float], grid_step: float = 1e-6,
                         channel_map=None, max_channels: int | None = None) -> ElectrodeBasis:
    """Gaussian stand-in electrodes, centres spaced by ``pitch`` around z=0.

    ``span`` is either a half-width (grid covers ``[-span, span]``) or an
    explicit ``(lo, hi)`` pair.
    """
    if n_electrodes < 2:
        raise InvalidArgument("need at least two electrodes")
    if not (pitch > 0 and width > 0 and grid_step > 0):
        raise InvalidArgument("pitch, width and grid_step must be positive")
    lo, hi = (-span, span) if np.isscalar(span) else span
    if not hi > lo:
        raise InvalidArgument("empty span")
    centers = (np.arange(n_electrodes) - (n_electrodes - 1) / 2) * pitch
    if centers[0] < lo or centers[-1] > hi:
        raise InvalidArgument("span does not cover all electrode centres")
    n_grid = int(round((hi - lo) / grid_step)) + 1
    grid = lo + grid_step * np.arange(n_grid)
    u = (grid[None, :] - centers[:, None]) / width
    phi = np.exp(-0.5 * u**2)
    dphi = -u / width * phi
    d2phi = (u**2 - 1.0) / width**2 * phi
    return ElectrodeBasis(grid, phi, dphi, d2phi, channel_map=channel_map,
                          max_channels=max_channels)


def electrode_centers(n_electrodes: int, pitch: float) -> np.ndarray:
    return (np.arange(n_electrodes) - (n_electrodes - 1) / 2) * pitch


def find_wells(basis: ElectrodeBasis, voltages, species: IonSpecies,
               search: tuple[float, float] | None = None) -> list[Well]:
    """All local minima of ``q * Phi`` inside ``search``, sorted by position."""
    lo, hi = basis.span if search is None else search
    if lo < basis.span[0] or hi > basis.span[1] or not hi > lo:
        raise OutOfRange(f"search interval [{lo:.6g}, {hi:.6g}] not inside basis span")
    pot = basis.potential(voltages)
    grid = basis.grid
    sel = np.flatnonzero((grid >= lo) & (grid <= hi))
    if sel.size < 3:
        return []
    vals = pot.node_values()[sel]
    zs = grid[sel]
    idx = np.flatnonzero((vals[1:-1] < vals[:-2]) & (vals[1:-1] <= vals[2:])) + 1

    positions = []
    for j in idx:
        a, b = zs[j - 1], zs[j + 1]
        sa, sb = pot.slope_at(a), pot.slope_at(b)
        if sa < 0 < sb:
            z = pot.stationary_point(a, b)
        elif sa == 0:
            z = a
        elif sb == 0:
            z = b
        else:
            # spline extremum disagrees with the node pattern; too shallow to matter
            logger.debug("discarding node minimum at %.6g m without slope bracket", zs[j])
            continue
        if pot.curvature_at(z) > 0:
            positions.append(z)
    positions = sorted(set(positions))

    edge_lo, edge_hi = pot.value_at(lo), pot.value_at(hi)
    wells = []
    for k, z in enumerate(positions):
        left = positions[k - 1] if k > 0 else lo
        right = positions[k + 1] if k + 1 < len(positions) else hi
        v_min = pot.value_at(z)
        barrier_l = _barrier(pot, grid, left, z, edge_lo if k == 0 else None)
        barrier_r = _barrier(pot, grid, z, right, edge_hi if k + 1 == len(positions) else None)
        depth_v = max(min(barrier_l, barrier_r) - v_min, 0.0)
        curv_v = pot.curvature_at(z)
        wells.append(Well(
            position=z,
            omega=float(np.sqrt(species.charge * curv_v / species.mass)),
            depth=species.charge * depth_v / ELEMENTARY_CHARGE,
            curvature=species.charge * curv_v,
        ))
    return wells


def _barrier(pot: Potential, grid, a, b, edge_value):
    """Highest potential between ``a`` and ``b``; refined at interior maxima."""
    sel = np.flatnonzero((grid > a) & (grid < b))
    candidates = [pot.value_at(a), pot.value_at(b)]
    if edge_value is not None:
        candidates.append(edge_value)
    if sel.size:
        j = sel[np.argmax(pot.node_values()[sel])]
        lo, hi = max(grid[j - 1], a), min(grid[j + 1], b)
        s_lo, s_hi = pot.slope_at(lo), pot.slope_at(hi)
        if s_lo > 0 > s_hi:
            candidates.append(pot.value_at(pot.stationary_point(lo, hi)))
        else:
            candidates.append(pot.value_at(grid[j]))
    return max(candidates)


# --- basis CSV ---------------------------------------------------------------

def save_basis(basis: ElectrodeBasis, path, derivative_path=None) -> None:
    """Write ``z,phi_1..phi_N`` (and optionally the ``dphi_i,d2phi_i`` companion)."""
    n = basis.n_electrodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z"] + [f"phi_{i + 1}" for i in range(n)])
        for j, z in enumerate(basis.grid):
            w.writerow([repr(float(z))] + [repr(float(x)) for x in basis.phi[:, j]])
    if derivative_path is not None:
        with open(derivative_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"dphi_{i + 1}" for i in range(n)] + [f"d2phi_{i + 1}" for i in range(n)])
            for j in range(basis.grid.size):
                w.writerow([repr(float(x)) for x in basis.dphi[:, j]]
                           + [repr(float(x)) for x in basis.d2phi[:, j]])


def _read_table(path, expected_header):
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise BasisParseError(f"{path}: empty file", row=1)
    header = [h.strip() for h in rows[0]]
    for col, (got, want) in enumerate(zip(header, expected_header(len(header))), start=1):
        if got != want:
            raise BasisParseError(f"{path}: header '{got}' where '{want}' expected",
                                  row=1, column=col)
    data = []
    for r, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise BasisParseError(f"{path}: {len(row)} fields, header has {len(header)}", row=r)
        vals = []
        for c, cell in enumerate(row, start=1):
            try:
                x = float(cell)
            except ValueError:
                raise BasisParseError(f"{path}: not a number: {cell!r}", row=r, column=c) from None
            if not np.isfinite(x):
                raise BasisParseError(f"{path}: non-finite value", row=r, column=c)
            vals.append(x)
        data.append(vals)
    if not data:
        raise BasisParseError(f"{path}: no data rows", row=2)
    return header, np.array(data)


def load_basis(path, derivative_path=None, channel_map=None,
               max_channels: int | None = None) -> ElectrodeBasis:
    """Read a basis CSV; derivatives default to central differences of ``phi``."""

    def phi_header(n):
        return ["z"] + [f"phi_{i}" for i in range(1, n)]

    header, table = _read_table(path, phi_header)
    if len(header) < 2:
        raise BasisParseError(f"{path}: no electrode columns", row=1)
    grid = table[:, 0]
    bad = np.flatnonzero(np.diff(grid) <= 0)
    if bad.size:
        # +2 for the header row and 1-based numbering, +1 for the second of the pair
        raise BasisParseError(f"{path}: grid not strictly increasing", row=int(bad[0]) + 3, column=1)
    if grid.size < 4:
        raise BasisParseError(f"{path}: need at least 4 grid points", row=grid.size + 1)
    phi = table[:, 1:].T.copy()
    n = phi.shape[0]
    if derivative_path is None:
        dphi = np.gradient(phi, grid, axis=1, edge_order=2)
        d2phi = np.gradient(dphi, grid, axis=1, edge_order=2)
    else:
        def deriv_header(m):
            k = m // 2
            return [f"dphi_{i}" for i in range(1, k + 1)] + [f"d2phi_{i}" for i in range(1, k + 1)]

        dheader, dtable = _read_table(derivative_path, deriv_header)
        if len(dheader) != 2 * n:
            raise BasisParseError(
                f"{derivative_path}: {len(dheader)} columns, expected {2 * n}", row=1)
        if dtable.shape[0] != grid.size:
            raise BasisParseError(
                f"{derivative_path}: {dtable.shape[0]} rows, basis has {grid.size}",
                row=dtable.shape[0] + 1)
        dphi = dtable[:, :n].T.copy()
        d2phi = dtable[:, n:].T.copy()
    return ElectrodeBasis(grid, phi, dphi, d2phi, channel_map=channel_map,
                          max_channels=max_channels)
