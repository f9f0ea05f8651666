"""Dense tableau simplex for ``min c.x  s.t.  A x = b, 0 <= x <= u``.

Nonbasic variables sit at either bound, so box constraints cost nothing extra
in the tableau. Pricing is Dantzig's rule; after a run of degenerate pivots the
solver switches to Bland's smallest-index rule, which cannot cycle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LPError(RuntimeError):
    """Infeasible, unbounded or numerically stalled linear program."""

    def __init__(self, message: str, basis=None):
        super().__init__(message)
        self.basis = basis


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    duals: np.ndarray        # y with  c - A^T y >= 0 on variables at lower bound
    basis: np.ndarray        # basic column indices (artificials are >= n)
    iterations: int


_DEGENERATE_SWITCH = 30


def _run_phase(T, beta, basis, at_upper, cost, upper, max_iter, tol, it0):
    """Iterate simplex pivots on tableau ``T`` (= B^-1 [A | I]) for ``cost``."""
    m, N = T.shape
    is_basic = np.zeros(N, dtype=bool)
    is_basic[basis] = True
    degenerate_run = 0
    it = it0
    while True:
        if it - it0 >= max_iter:
            raise LPError("iteration limit reached", basis.copy())
        red = cost - cost[basis] @ T
        red[is_basic] = 0.0
        can_rise = (~at_upper) & (red < -tol) & (upper > 0)
        can_fall = at_upper & (red > tol)
        eligible = np.flatnonzero(can_rise | can_fall)
        if eligible.size == 0:
            return it
        if degenerate_run >= _DEGENERATE_SWITCH:
            j = int(eligible[0])
        else:
            j = int(eligible[np.argmax(np.abs(red[eligible]))])
        s = 1.0 if not at_upper[j] else -1.0
        col = T[:, j]
        delta = -s * col              # change of basic values per unit step
        theta = upper[j]              # bound flip limit
        leave = -1
        leave_to_upper = False
        ub = upper[basis]
        ratio = np.full(m, np.inf)
        dec = delta < -tol
        ratio[dec] = beta[dec] / -delta[dec]
        inc = (delta > tol) & np.isfinite(ub)
        ratio[inc] = (ub[inc] - beta[inc]) / delta[inc]
        if np.any(np.isfinite(ratio)):
            rmin = ratio.min()
            if rmin < theta:
                ties = np.flatnonzero(ratio <= rmin + tol)
                # smallest basic index among ties keeps Bland's rule cycle-free
                leave = int(ties[np.argmin(basis[ties])]) if ties.size > 1 else int(ties[0])
                theta, leave_to_upper = rmin, bool(inc[leave])
        if not np.isfinite(theta):
            raise LPError("problem is unbounded", basis.copy())
        theta = max(theta, 0.0)
        degenerate_run = degenerate_run + 1 if theta <= tol else 0
        it += 1
        beta += theta * delta
        if leave < 0:
            at_upper[j] = not at_upper[j]
            continue
        start = upper[j] if at_upper[j] else 0.0
        entering_value = start + s * theta
        old = basis[leave]
        piv = T[leave, j]
        T[leave] /= piv
        others = np.arange(m) != leave
        T[others] -= np.outer(T[others, j], T[leave])
        basis[leave] = j
        is_basic[old] = False
        is_basic[j] = True
        at_upper[old] = leave_to_upper
        at_upper[j] = False
        beta[leave] = entering_value
        # clean drift on the bounds
        np.clip(beta, 0.0, upper[basis], out=beta)


def solve_lp(c, A, b, upper=None, max_iter: int = 50_000, tol: float = 1e-10) -> LPResult:
    """Minimize ``c.x`` subject to ``A x = b`` and ``0 <= x <= upper``."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64).copy()
    c = np.asarray(c, dtype=np.float64)
    m, n = A.shape
    up = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=np.float64).copy()
    flip = np.where(b < 0, -1.0, 1.0)
    T = np.hstack([A * flip[:, None], np.eye(m)])
    beta = b * flip
    N = n + m
    upper_all = np.concatenate([up, np.full(m, np.inf)])
    basis = np.arange(n, N)
    at_upper = np.zeros(N, dtype=bool)
    scale = max(1.0, float(np.abs(A).max(initial=0.0)), float(np.abs(b).max(initial=0.0)))

    phase1 = np.concatenate([np.zeros(n), np.ones(m)])
    it = _run_phase(T, beta, basis, at_upper, phase1, upper_all, max_iter, tol, 0)
    infeas = float(beta[basis >= n].sum())
    if infeas > 1e-7 * scale:
        raise LPError(f"problem is infeasible (phase-one residual {infeas:.3e})", basis.copy())
    # artificials may stay basic at level zero but can never re-enter
    upper_all[n:] = 0.0
    beta[basis >= n] = 0.0
    cost = np.concatenate([c, np.zeros(m)])
    it = _run_phase(T, beta, basis, at_upper, cost, upper_all, max_iter, tol, it)

    x_all = np.where(at_upper, upper_all, 0.0)
    x_all[np.isinf(x_all)] = 0.0
    x_all[basis] = beta
    x = x_all[:n]
    # B^-1 sits in the artificial block (up to the row flips)
    Binv = T[:, n:] * flip[None, :]
    duals = cost[basis] @ Binv
    return LPResult(x=x, objective=float(c @ x), duals=duals, basis=basis.copy(), iterations=it)
