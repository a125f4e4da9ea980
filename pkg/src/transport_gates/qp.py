"""Box-constrained convex quadratic programs by a primal active-set method.

Solves ``min 0.5 x^T H x + g^T x  s.t.  lower <= x <= upper`` for symmetric
positive definite ``H``.  Unbounded variables use ``-inf``/``inf``.  A warm
start (previous solution and its active set) usually terminates in one or
two subspace solves when consecutive problems differ slightly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

__all__ = ["QPResult", "solve_box_qp", "kkt_residual"]


@dataclass
class QPResult:
    x: np.ndarray
    active_lower: np.ndarray
    active_upper: np.ndarray
    iterations: int
    kkt: float  # scaled projected-gradient norm
    converged: bool


def kkt_residual(H, g, x, lower, upper) -> float:
    """Infinity norm of the projected gradient, scaled by the problem size.

    Zero exactly at a KKT point of the box QP.
    """
    grad = H @ x + g
    proj = grad.copy()
    at_lo = x <= lower
    at_hi = x >= upper
    proj[at_lo] = np.minimum(grad[at_lo], 0.0)
    proj[at_hi] = np.maximum(grad[at_hi], 0.0)
    proj[at_lo & at_hi] = 0.0
    scale = max(np.abs(g).max(initial=0.0),
                np.abs(H).max(initial=0.0) * np.abs(x).max(initial=0.0), 1e-300)
    return float(np.abs(proj).max(initial=0.0) / scale)


def solve_box_qp(H, g, lower, upper, x0=None, active_lower=None, active_upper=None,
                 tol: float = 1e-10, max_iter: int | None = None) -> QPResult:
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    n = g.size
    if np.any(lower > upper):
        raise ValueError("infeasible bounds: lower > upper")
    if max_iter is None:
        max_iter = 10 * n + 50

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    x = np.clip(x, lower, upper)
    lo_set = (x <= lower) if active_lower is None else (np.asarray(active_lower) & (x <= lower))
    hi_set = (x >= upper) if active_upper is None else (np.asarray(active_upper) & (x >= upper))
    fixed = lower == upper
    lo_set |= fixed
    x[lo_set] = lower[lo_set]
    x[hi_set & ~lo_set] = upper[hi_set & ~lo_set]
    hi_set &= ~lo_set

    it = 0
    while it < max_iter:
        it += 1
        free = ~(lo_set | hi_set)
        if free.any():
            F = np.flatnonzero(free)
            rhs = -(g[F] + H[np.ix_(F, ~free)] @ x[~free])
            try:
                target = cho_solve(cho_factor(H[np.ix_(F, F)]), rhs)
            except LinAlgError:
                target = np.linalg.lstsq(H[np.ix_(F, F)], rhs, rcond=None)[0]
            p = target - x[F]
        else:
            F = np.array([], dtype=int)
            p = np.array([])

        step_scale = max(np.abs(x).max(initial=0.0), 1.0)
        if p.size == 0 or np.abs(p).max() <= 1e-15 * step_scale:
            if p.size:
                x[F] = target
            grad = H @ x + g
            # multipliers of active bounds: lower needs grad >= 0, upper grad <= 0
            viol = np.zeros(n)
            release = lo_set & ~fixed
            viol[release] = np.maximum(-grad[release], 0.0)
            viol[hi_set] = np.maximum(grad[hi_set], 0.0)
            j = int(np.argmax(viol))
            if viol[j] <= 0.0:
                break
            lo_set[j] = False
            hi_set[j] = False
            continue

        # ratio test toward the subspace minimiser
        alpha = 1.0
        block = -1
        block_upper = False
        xF = x[F]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = np.where(p < 0, (lower[F] - xF) / p, np.inf)
            t_hi = np.where(p > 0, (upper[F] - xF) / p, np.inf)
        k_lo = int(np.argmin(t_lo))
        k_hi = int(np.argmin(t_hi))
        if t_lo[k_lo] < alpha:
            alpha, block, block_upper = t_lo[k_lo], F[k_lo], False
        if t_hi[k_hi] < alpha:
            alpha, block, block_upper = t_hi[k_hi], F[k_hi], True
        x[F] = xF + max(alpha, 0.0) * p
        if block >= 0:
            if block_upper:
                hi_set[block] = True
                x[block] = upper[block]
            else:
                lo_set[block] = True
                x[block] = lower[block]
        else:
            x[F] = target

    x = np.clip(x, lower, upper)
    kkt = kkt_residual(H, g, x, lower, upper)
    return QPResult(x=x, active_lower=lo_set.copy(), active_upper=hi_set.copy(),
                    iterations=it, kkt=kkt, converged=kkt <= tol)
