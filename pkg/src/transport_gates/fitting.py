"""Weighted nonlinear least squares for the scan lineshapes.

Levenberg-Marquardt with Marquardt (diagonal) damping, so the iteration is
insensitive to the very different scales of rad/s, s and dimensionless
parameters.  Parameters that only enter the model through their magnitude
(transit decay rate, Gaussian width) are folded to non-negative values after
the fit; their covariance rows change sign accordingly.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import erf

from .errors import InvalidArgument, RankDeficiencyError

logger = logging.getLogger(__name__)

MAX_ITER = 500
CHI2_RTOL = 1e-10
GRAD_TOL = 1e-12
FD_STEP = 1e-6
RANK_TOL = 1e-12  # relative eigenvalue of the scaled normal matrix


@dataclass(frozen=True)
class FitModel:
    name: str
    params: tuple
    units: tuple
    func: Callable  # f(x, p) -> y
    guess: Callable  # (x, y) -> p0
    jacobian: Callable | None = None  # (x, p) -> (n, k)
    canonicalize: Callable | None = None  # p -> (p, signs)

    def __call__(self, x, p):
        return self.func(np.asarray(x, dtype=float), np.asarray(p, dtype=float))


# --- model functions ----------------------------------------------------------

def _transit_zeta(t, omega0, chi, t0):
    if chi == 0:
        return 2.0 * omega0 * t  # chi -> 0 limit of the erf difference
    return omega0 / chi * np.sqrt(np.pi) * (erf(chi * t0) - erf(chi * (t0 - t)))


def transit_rabi(t, p):
    omega0, chi, t0, a, c = p
    return c + a * np.cos(_transit_zeta(t, omega0, chi, t0) / 2) ** 2


def sinusoid(x, p):
    amp, phi0, c = p
    return c + 0.5 * amp * np.cos(x - phi0)


def _sinusoid_jac(x, p):
    amp, phi0, _ = p
    return np.column_stack([0.5 * np.cos(x - phi0), 0.5 * amp * np.sin(x - phi0), np.ones_like(x)])


def erf_step(t, p):
    a, b, s, tc = p
    return 0.5 * (a + b * erf(s * (t - tc)))


def _erf_jac(t, p):
    a, b, s, tc = p
    u = s * (t - tc)
    g = np.exp(-u * u) / np.sqrt(np.pi)  # 0.5 * d erf/du
    return np.column_stack([np.full_like(t, 0.5), 0.5 * erf(u), b * g * (t - tc), -b * g * s])


def gaussian(x, p):
    amp, x0, width, c = p
    return c + amp * np.exp(-((x - x0) ** 2) / (2 * width**2))


def _gaussian_jac(x, p):
    amp, x0, width, _ = p
    e = np.exp(-((x - x0) ** 2) / (2 * width**2))
    return np.column_stack([e, amp * e * (x - x0) / width**2,
                            amp * e * (x - x0) ** 2 / width**3, np.ones_like(x)])


# --- canonical forms ----------------------------------------------------------

def _fold(p, idx):
    p = np.array(p, dtype=float)
    signs = np.ones_like(p)
    for i in idx:
        if p[i] < 0:
            p[i] = -p[i]
            signs[i] = -1.0
    return p, signs


def _canon_transit(p):
    return _fold(p, (0, 1))  # even in omega0 and chi


def _canon_gaussian(p):
    return _fold(p, (2,))


def _canon_erf(p):
    p = np.array(p, dtype=float)
    signs = np.ones_like(p)
    if p[1] < 0:  # (b, s) -> (-b, -s) leaves the curve unchanged
        p[1], p[2] = -p[1], -p[2]
        signs[1] = signs[2] = -1.0
    return p, signs


def _canon_sinusoid(p):
    p = np.array(p, dtype=float)
    signs = np.ones_like(p)
    if p[0] < 0:
        p[0] = -p[0]
        p[1] += np.pi
        signs[0] = -1.0
    p[1] = (p[1] + np.pi) % (2 * np.pi) - np.pi
    return p, signs


# --- initial guesses ----------------------------------------------------------

def _smooth(y, width=3):
    if y.size < 2 * width + 1:
        return y.copy()
    kernel = np.ones(width) / width
    pad = width // 2
    yp = np.pad(y, pad, mode="edge")
    return np.convolve(yp, kernel, mode="valid")


def _edges(y, frac=0.2):
    k = max(1, int(round(frac * y.size)))
    return y[:k], y[-k:]


def guess_sinusoid(x, y):
    """Amplitude from the range, phase from the discrete Fourier component at period 2 pi."""
    c = float(np.mean(y))
    amp = float(np.ptp(y))
    z = np.sum((y - c) * np.exp(-1j * x))
    phi0 = float(np.angle(z)) if abs(z) > 0 else 0.0
    return np.array([amp, phi0, c])


def guess_erf_step(t, y):
    ys = _smooth(y)
    lo, hi = _edges(ys)
    y_lo, y_hi = float(np.mean(lo)), float(np.mean(hi))
    a, b = y_lo + y_hi, abs(y_hi - y_lo)
    grad = np.gradient(ys, t)
    tc = float(t[int(np.argmax(np.abs(grad)))])
    # quartile crossings: erf(s dt) = +-1/2 at s dt = 0.4769
    s = 0.0
    if b > 0:
        u = (ys - min(y_lo, y_hi)) / b
        if y_hi < y_lo:
            u = 1.0 - u
        above = t[u > 0.75]
        below = t[u < 0.25]
        if above.size and below.size:
            width = abs(above.min() - below.max())
            s = 0.4769 / max(width / 2, np.ptp(t) / (4 * t.size))
    if s == 0:
        s = 4.0 / np.ptp(t)
    return np.array([a, b, s * (1 if y_hi >= y_lo else -1), tc])


def guess_gaussian(x, y):
    """Baseline from the tails, centre and width from moments of the excess."""
    lo, hi = _edges(y)
    c = float(np.median(np.concatenate([lo, hi])))
    ys = _smooth(y)
    dev = ys - c
    sign = 1.0 if dev.max() >= -dev.min() else -1.0
    w = np.clip(sign * dev, 0.0, None)
    if w.sum() == 0:
        return np.array([0.0, float(np.mean(x)), np.ptp(x) / 4, c])
    k = int(np.argmax(w))
    # restrict the moments to the connected lobe around the extremum
    half = w > 0.1 * w[k]
    left = k
    while left > 0 and half[left - 1]:
        left -= 1
    right = k
    while right < w.size - 1 and half[right + 1]:
        right += 1
    sl = slice(left, right + 1)
    x0 = float(np.sum(w[sl] * x[sl]) / np.sum(w[sl]))
    dx = np.median(np.diff(x)) if x.size > 1 else 1.0
    width = float(np.sqrt(max(np.sum(w[sl] * (x[sl] - x0) ** 2) / np.sum(w[sl]), dx**2)))
    return np.array([sign * w[k], x0, width, c])


def guess_transit_rabi(t, y):
    """Coarse grid over ``(chi, t0, K = sqrt(pi) Omega0 / chi)``.

    Offset and amplitude enter linearly, so each grid point is scored by
    its best linear fit; the winner seeds the nonlinear solver.
    """
    t = np.asarray(t, dtype=float)
    span = max(np.ptp(t), 1e-300)
    chis = np.geomspace(2.0 / span, 200.0 / span, 28)
    t0s = t.min() + span * np.linspace(0.05, 0.95, 25)
    ks = np.linspace(0.25, 25.0, 100)
    best = (np.inf, None)
    n = t.size
    sy = y.sum()
    for chi in chis:
        f = erf(chi * t0s)[:, None] - erf(chi * (t0s[:, None] - t[None, :]))  # (t0, n)
        u = np.cos(0.5 * ks[:, None, None] * f[None]) ** 2  # (K, t0, n)
        su = u.sum(-1)
        suu = (u * u).sum(-1)
        suy = u @ y
        det = n * suu - su * su
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (n * suy - su * sy) / det
            c = (sy - a * su) / n
        a = np.where(det > 1e-12 * n * n, a, 0.0)
        c = np.where(det > 1e-12 * n * n, c, sy / n)
        # residual sum of squares without forming the residual arrays
        rss = (y @ y) + a * a * suu + n * c * c - 2 * a * suy - 2 * c * sy + 2 * a * c * su
        rss = np.where(a > 0, rss, np.inf)
        i, j = np.unravel_index(np.argmin(rss), rss.shape)
        if rss[i, j] < best[0]:
            best = (rss[i, j], (ks[i] * chi / np.sqrt(np.pi), chi, t0s[j], a[i, j], c[i, j]))
    if best[1] is None:
        return np.array([1.0 / span, 1.0 / span, float(np.mean(t)), float(np.ptp(y)), float(y.min())])
    return np.array(best[1], dtype=float)


MODELS: dict[str, FitModel] = {
    "transit_rabi": FitModel("transit_rabi", ("omega0", "chi", "t0", "a", "c"),
                             ("rad/s", "1/s", "s", "", ""), transit_rabi,
                             guess_transit_rabi, None, _canon_transit),
    "sinusoid": FitModel("sinusoid", ("amplitude", "phi0", "c"), ("", "rad", ""),
                         sinusoid, guess_sinusoid, _sinusoid_jac, _canon_sinusoid),
    "erf_step": FitModel("erf_step", ("a", "b", "s", "t_c"), ("", "", "1/s", "s"),
                         erf_step, guess_erf_step, _erf_jac, _canon_erf),
    "gaussian": FitModel("gaussian", ("amplitude", "x0", "sigma", "c"), ("", "Hz", "Hz", ""),
                         gaussian, guess_gaussian, _gaussian_jac, _canon_gaussian),
}


def get_model(name: str) -> FitModel:
    try:
        return MODELS[name]
    except KeyError:
        raise InvalidArgument(f"unknown fit model {name!r}; choose from {sorted(MODELS)}") from None


def initial_guess(model: FitModel | str, x, y) -> np.ndarray:
    model = get_model(model) if isinstance(model, str) else model
    return np.asarray(model.guess(np.asarray(x, dtype=float), np.asarray(y, dtype=float)), dtype=float)


# --- solver -------------------------------------------------------------------

@dataclass
class FitResult:
    model: str
    names: tuple
    units: tuple
    values: np.ndarray
    sigmas: np.ndarray
    covariance: np.ndarray = field(repr=False)
    chi2: float
    dof: int
    converged: bool
    iterations: int
    degenerate: tuple = ()

    @property
    def chi2_reduced(self) -> float:
        return self.chi2 / self.dof if self.dof > 0 else float("nan")

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def sigma(self, name) -> float:
        return float(self.sigmas[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "parameters": {n: {"value": float(v), "sigma": float(s), "unit": u}
                           for n, v, s, u in zip(self.names, self.values, self.sigmas, self.units)},
            "covariance": [float(c) for c in self.covariance.ravel()],
            "chi2_reduced": float(self.chi2_reduced),
            "converged": bool(self.converged),
            "degenerate": list(self.degenerate),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _fd_jacobian(f, x, p, y0, typical=None):
    """Forward differences; ``typical`` floors the step for parameters that pass through zero."""
    jac = np.empty((x.size, p.size))
    typical = np.zeros_like(p) if typical is None else typical
    for k in range(p.size):
        scale = max(abs(p[k]), typical[k])
        h = FD_STEP * scale if scale > 0 else FD_STEP
        q = p.copy()
        q[k] += h
        jac[:, k] = (f(x, q) - y0) / (q[k] - p[k])
    return jac


def _unidentifiable(A, names):
    d = np.sqrt(np.diag(A))
    bad = [names[i] for i in np.flatnonzero(d == 0)]
    d = np.where(d > 0, d, 1.0)
    S = A / np.outer(d, d)
    w, vecs = np.linalg.eigh(S)
    small = w < RANK_TOL * max(w.max(), 1e-300)
    for j in np.flatnonzero(small):
        bad.extend(names[i] for i in np.flatnonzero(np.abs(vecs[:, j]) > 0.3))
    return tuple(dict.fromkeys(bad))


def fit_curve(model: FitModel | str, x, y, sigma, p0=None, *, max_iter: int = MAX_ITER,
              on_degenerate: str = "raise") -> FitResult:
    """Minimise ``sum(((y - f(x, p)) / sigma)^2)``.

    ``on_degenerate="flag"`` returns a result with infinite uncertainties
    on unidentifiable parameters instead of raising.
    """
    model = get_model(model) if isinstance(model, str) else model
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument("x and y must be 1-D arrays of equal length")
    if np.any(~np.isfinite(y)) or np.any(~np.isfinite(x)):
        raise InvalidArgument("data contain non-finite values")
    if np.any(sigma <= 0):
        raise InvalidArgument("uncertainties must be positive")
    k = len(model.params)
    if y.size < k:
        raise InvalidArgument(f"{y.size} points cannot constrain {k} parameters")
    if on_degenerate not in ("raise", "flag"):
        raise InvalidArgument("on_degenerate must be 'raise' or 'flag'")

    p = initial_guess(model, x, y) if p0 is None else np.array(p0, dtype=float)
    if p.size != k:
        raise InvalidArgument(f"{model.name} takes {k} parameters")
    w = 1.0 / sigma
    # parameters converging to zero keep a step tied to their starting magnitude
    typical = 1e-3 * np.abs(p)

    def jac(q, fq):
        if model.jacobian is not None:
            return model.jacobian(x, q)
        return _fd_jacobian(model.func, x, q, fq, typical)

    f = model.func(x, p)
    r = (y - f) * w
    chi2 = float(r @ r)
    lam = 1e-3
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        J = jac(p, f) * w[:, None]
        A = J.T @ J
        g = J.T @ r
        dA = np.diag(A).copy()
        scale = np.sqrt(np.where(dA > 0, dA, 1.0))
        if np.max(np.abs(g) / scale) < GRAD_TOL * max(1.0, np.sqrt(chi2)):
            converged = True
            break
        damp = np.where(dA > 0, dA, 1.0)
        accepted = False
        while lam < 1e16:
            M = A + lam * np.diag(damp)
            try:
                step = np.linalg.solve(M, g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(M, g, rcond=None)[0]
            q = p + step
            fq = model.func(x, q)
            rq = (y - fq) * w
            c2 = float(rq @ rq)
            if np.isfinite(c2) and c2 <= chi2:
                accepted = True
                break
            lam *= 2.0
        if not accepted:
            converged = True  # no descent direction left at machine precision
            break
        rel = (chi2 - c2) / max(chi2, 1e-300)
        p, f, r, chi2 = q, fq, rq, c2
        lam = max(lam / 3.0, 1e-12)
        if rel < CHI2_RTOL:
            converged = True
            break
    if not converged:
        logger.warning("%s fit stopped after %d iterations", model.name, it)

    J = jac(p, f) * w[:, None]
    A = J.T @ J
    degenerate = _unidentifiable(A, model.params)
    if degenerate:
        if on_degenerate == "raise":
            raise RankDeficiencyError("singular normal matrix", parameters=list(degenerate))
        cov = np.linalg.pinv(A, rcond=1e-12)
        for name in degenerate:
            i = model.params.index(name)
            cov[i, :] = cov[:, i] = 0.0
            cov[i, i] = np.inf
    else:
        cov = np.linalg.inv(A)
    if model.canonicalize is not None:
        p, signs = model.canonicalize(p)
        cov = cov * np.outer(signs, signs)
    return FitResult(model.name, model.params, model.units, p, np.sqrt(np.diag(cov)), cov,
                     chi2, y.size - k, converged, it, degenerate)


def fit_scan(model, scan, p0=None, **kwargs) -> FitResult:
    return fit_curve(model, scan.x, scan.p_hat, scan.sigma, p0, **kwargs)
