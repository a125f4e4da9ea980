"""SPAM errors, projection-noise sampling, and the three scan types.

Observed bright probability for an ideal up-state population ``p``::

    p1    = (1 - 2 eps_p) p + eps_p            # preparation flips the qubit
    p2    = T p1                                # every transfer must succeed, T = prod(1 - eps_t)
    p_obs = (1 - eps_b) p2 + eps_d (1 - p2)     # readout misassignment

so ``p_obs = A p + B`` with ``A = (1 - 2 eps_p) T (1 - eps_b - eps_d)`` and
``B = eps_p T (1 - eps_b - eps_d) + eps_d``.  A failed transfer leaves the
population dark.
"""
from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import (PhaseShift, QubitState, SequenceOptions, TransferPulse,
                       TransportSegment, run_sequence, run_sequence_batch)
from .errors import InvalidArgument, SequencingError

logger = logging.getLogger(__name__)

#: repeats per point used in the three experiments
SHOTS_RABI = 350
SHOTS_RAMSEY = 600
SHOTS_PARALLEL = 250

SCAN_UNITS = {"t_off": "s", "phase": "rad", "frequency": "Hz"}


@dataclass(frozen=True)
class SpamModel:
    prep_error: float = 0.0
    transfer_error: float = 0.008
    dark_error: float = 0.0  # dark read as bright
    bright_error: float = 0.0  # bright read as dark
    n_transfers: int = 2

    def __post_init__(self):
        for name in ("prep_error", "transfer_error", "dark_error", "bright_error"):
            x = getattr(self, name)
            if not 0 <= x < 0.5:
                raise InvalidArgument(f"{name} must lie in [0, 0.5)")
        if self.n_transfers < 0:
            raise InvalidArgument("n_transfers must be non-negative")

    def transfer_success(self, elements=None) -> float:
        """Probability that every transfer pulse succeeds.

        Transfer pulses in ``elements`` override ``n_transfers`` when present.
        """
        pulses = [e for e in (elements or ()) if isinstance(e, TransferPulse)]
        if not pulses:
            return (1.0 - self.transfer_error) ** self.n_transfers
        out = 1.0
        for p in pulses:
            if p.affects_contrast:
                out *= 1.0 - (self.transfer_error if p.infidelity is None else p.infidelity)
        return out

    def affine(self, elements=None) -> tuple[float, float]:
        t = self.transfer_success(elements)
        read = 1.0 - self.bright_error - self.dark_error
        a = (1.0 - 2.0 * self.prep_error) * t * read
        b = self.prep_error * t * read + self.dark_error
        return a, b


IDEAL_SPAM = SpamModel(transfer_error=0.0)


def apply_spam(p_ideal, spam: SpamModel, elements=None):
    p = np.asarray(p_ideal, dtype=float)
    if np.any((p < -1e-12) | (p > 1 + 1e-12)) or np.any(~np.isfinite(p)):
        raise InvalidArgument("ideal probability outside [0, 1]")
    a, b = spam.affine(elements)
    out = a * np.clip(p, 0.0, 1.0) + b
    return float(out) if out.ndim == 0 else out


def projection_sigma(p_hat, n):
    """``sqrt(p (1-p) / N)`` with ``p`` clamped to ``[1/2N, 1 - 1/2N]``."""
    n = np.asarray(n, dtype=float)
    p = np.clip(p_hat, 0.5 / n, 1.0 - 0.5 / n)
    return np.sqrt(p * (1.0 - p) / n)


def point_rng(seed: int, scan_index: int, point_index: int, ion_index: int = 0) -> np.random.Generator:
    """Counter-based stream for one scan point, independent of evaluation order."""
    ss = np.random.SeedSequence([int(seed), int(scan_index), int(ion_index), int(point_index)])
    return np.random.Generator(np.random.Philox(ss))


def sample_counts(p_obs: float, n: int, rng: np.random.Generator) -> tuple[float, float]:
    if n < 1:
        raise InvalidArgument("need at least one repeat")
    k = rng.binomial(int(n), min(max(float(p_obs), 0.0), 1.0))
    p_hat = k / n
    return p_hat, float(projection_sigma(p_hat, n))


@dataclass(frozen=True, eq=False)
class ScanResult:
    variable: str
    unit: str
    x: np.ndarray
    p_hat: np.ndarray
    sigma: np.ndarray
    n: np.ndarray
    seed: int = 0
    label: str = ""
    p_obs: np.ndarray | None = field(default=None, repr=False)  # noiseless expectation

    def __post_init__(self):
        for name in ("x", "p_hat", "sigma", "n"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        if np.any(self.n <= 0):
            raise InvalidArgument("repeat counts must be positive")

    def __len__(self):
        return self.x.size

    def to_csv(self, path=None, meta: dict | None = None) -> str:
        """Header comment ``# variable=... unit=... seed=...`` then ``x,p_hat,sigma,n`` rows."""
        tokens = {"variable": self.variable, "unit": self.unit, "seed": self.seed}
        if self.label:
            tokens["label"] = self.label
        tokens.update(meta or {})
        buf = io.StringIO()
        buf.write("# " + " ".join(f"{k}={v}" for k, v in tokens.items()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "p_hat", "sigma", "n"])
        for row in zip(self.x, self.p_hat, self.sigma, self.n):
            w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "ScanResult":
        text = Path(path).read_text()
        lines = text.splitlines()
        meta = {}
        if lines and lines[0].startswith("#"):
            for tok in lines[0][1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            lines = lines[1:]
        rows = list(csv.reader(lines))
        if not rows or [h.strip() for h in rows[0]] != ["x", "p_hat", "sigma", "n"]:
            raise InvalidArgument(f"{path}: expected header x,p_hat,sigma,n")
        data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
        if data.size == 0:
            raise InvalidArgument(f"{path}: no data rows")
        return cls(meta.get("variable", "x"), meta.get("unit", ""), data[:, 0], data[:, 1],
                   data[:, 2], data[:, 3].astype(int), int(meta.get("seed", 0)),
                   meta.get("label", ""))


# --- scans --------------------------------------------------------------------

@dataclass(frozen=True)
class IonSetup:
    name: str
    elements: tuple


@dataclass(frozen=True)
class Scenario:
    ions: tuple
    spam: SpamModel = SpamModel()
    options: SequenceOptions = SequenceOptions()
    seed: int = 0
    initial: QubitState = field(default_factory=QubitState.up)


@dataclass(frozen=True)
class ScanSpec:
    variable: str  # t_off | phase | frequency
    grid: np.ndarray  # s, rad or Hz
    shots: int = SHOTS_RABI
    target: int | None = None  # element index receiving the scan value
    scan_index: int = 0

    def __post_init__(self):
        if self.variable not in SCAN_UNITS:
            raise InvalidArgument(f"unknown scan variable {self.variable!r}")
        grid = np.atleast_1d(np.asarray(self.grid, dtype=float))
        if grid.size == 0:
            raise InvalidArgument("scan grid is empty")
        object.__setattr__(self, "grid", grid)


def _default_target(elements, variable):
    idx = [i for i, e in enumerate(elements) if isinstance(e, TransportSegment)]
    if not idx:
        raise SequencingError(f"{variable} scan needs a transport segment")
    # t_off truncates the first gate; the phase scan shifts the last one
    return idx[0] if variable == "t_off" else idx[-1]


def substitute(elements, variable, value, target=None):
    """Copy of ``elements`` with the scan value applied."""
    elements = list(elements)
    if variable == "frequency":
        return elements
    i = _default_target(elements, variable) if target is None else target
    el = elements[i]
    if variable == "t_off":
        if not isinstance(el, TransportSegment):
            raise SequencingError("t_off target is not a transport segment", element=i)
        elements[i] = replace(el, t_off=float(value))
    elif variable == "phase":
        if isinstance(el, PhaseShift):
            elements[i] = PhaseShift(float(value))
        else:
            elements[i] = replace(el, phase=float(value))
    return elements


def ideal_probabilities(scenario: Scenario, spec: ScanSpec, ion: IonSetup,
                        threads: int = 1) -> np.ndarray:
    """Noiseless up-state population at every grid value for one ion."""
    if spec.variable == "frequency":
        # the grid is the laser offset: the ion sees delta = shift - 2 pi f,
        # so resonances appear at f = shift / 2 pi
        base = -2 * np.pi * spec.grid
        try:
            return run_sequence_batch(scenario.initial, ion.elements, base, scenario.options)
        except SequencingError as exc:
            raise SequencingError(f"frequency scan of {ion.name}: {exc}") from exc

    def one(value):
        els = substitute(ion.elements, spec.variable, value, spec.target)
        try:
            return run_sequence(scenario.initial, els, scenario.options).p_up
        except SequencingError as exc:
            raise SequencingError(f"{spec.variable} = {value:.6g}: {exc}") from exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(one, spec.grid)))
    return np.array([one(v) for v in spec.grid])


def sample_scan(p_obs, spec: ScanSpec, seed: int, ion_index: int = 0, label: str = "") -> ScanResult:
    p_obs = np.asarray(p_obs, dtype=float)
    p_hat = np.empty_like(p_obs)
    sigma = np.empty_like(p_obs)
    for j, p in enumerate(p_obs):
        p_hat[j], sigma[j] = sample_counts(p, spec.shots, point_rng(seed, spec.scan_index, j, ion_index))
    return ScanResult(spec.variable, SCAN_UNITS[spec.variable], spec.grid.copy(), p_hat, sigma,
                      np.full(p_obs.size, spec.shots), seed, label, p_obs)


def run_scan(scenario: Scenario, spec: ScanSpec, threads: int = 1,
             seed: int | None = None) -> list[ScanResult]:
    """Simulated data for every ion in ``scenario``."""
    seed = scenario.seed if seed is None else seed
    results = []
    for k, ion in enumerate(scenario.ions):
        p = ideal_probabilities(scenario, spec, ion, threads)
        p_obs = apply_spam(np.clip(p, 0.0, 1.0), scenario.spam, ion.elements)
        results.append(sample_scan(p_obs, spec, seed, k, ion.name))
    return results


def lineshape_skewness(x, p, dip: bool = True, n_resample: int = 4001) -> float:
    """Third standardised moment of a resonance line about its own centroid.

    The line is weighted by ``1 - p`` for a dip (population leaves |up>) and
    by ``p`` otherwise, then resampled on a window symmetric about the
    centroid so that a grid not centred on the line does not bias the result.
    """
    x = np.asarray(x, dtype=float)
    w = np.clip(1.0 - np.asarray(p, dtype=float) if dip else np.asarray(p, dtype=float), 0.0, None)
    if x.size < 3 or w.sum() == 0:
        raise InvalidArgument("lineshape needs at least three points with non-zero weight")
    m = float(np.sum(w * x) / w.sum())
    for _ in range(2):
        h = min(m - x[0], x[-1] - m)
        if h <= 0:
            raise InvalidArgument("line centre lies outside the scanned range")
        u = np.linspace(-h, h, n_resample)
        ww = np.interp(m + u, x, w)
        m += float(np.sum(ww * u) / ww.sum())
    h = min(m - x[0], x[-1] - m)
    u = np.linspace(-h, h, n_resample)
    ww = np.interp(m + u, x, w)
    s2 = np.sum(ww * u**2) / ww.sum()
    return float(np.sum(ww * u**3) / ww.sum() / s2**1.5)
