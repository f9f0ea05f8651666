"""Exact and summary-based lp regression, and additive-error l_inf regression."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .matcore import PNorm, as_matrix, as_pnorm, vector_pnorm
from .simplex import LPError, solve_lp


class ConvergenceError(RuntimeError):
    pass


@dataclass
class RegressionInstance:
    A: np.ndarray
    b: np.ndarray
    p: PNorm

    def __post_init__(self):
        self.A = as_matrix(self.A, "A")
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        self.p = as_pnorm(self.p)
        if self.b.shape[0] != self.A.shape[0]:
            raise ValueError(f"A has {self.A.shape[0]} rows but b has {self.b.shape[0]} entries")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("b contains non-finite entries")

    def objective(self, x) -> float:
        return vector_pnorm(self.A @ np.asarray(x, dtype=np.float64) - self.b, self.p)


@dataclass
class RegressionSolution:
    x: np.ndarray
    objective: float
    method: str
    iterations: int = 0
    converged: bool = True
    certified_gap: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "objective": float(self.objective),
            "method": self.method,
            "certified_gap": None if self.certified_gap is None else float(self.certified_gap),
        }


def _polish(A, b, rows, signs=None):
    """Solve the square system of active constraints picked out by an LP basis."""
    M = A[rows]
    rhs = b[rows]
    if signs is not None:
        M = np.hstack([M, -signs[:, None]])
    if M.shape[0] != M.shape[1]:
        return None
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol


def l1_regression(A, b, weights=None):
    """min_x sum_i w_i |a_i x - b_i| through the box-constrained LP dual.

    The dual is  max b.u  s.t. A^T u = 0, |u_i| <= w_i, a d-row tableau, so
    the cost per pivot is O(d n). Returns ``(x, iterations)``.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, d = A.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if d == 0:
        return np.zeros(0), 0
    # u = v - w with 0 <= v <= 2w
    res = solve_lp(-b, A.T, A.T @ w, upper=2 * w)
    x = -res.duals
    rows = res.basis[res.basis < n]
    if rows.size == d:
        polished = _polish(A, b, rows)
        if polished is not None:
            if np.sum(w * np.abs(A @ polished - b)) <= np.sum(w * np.abs(A @ x - b)) + 1e-12:
                x = polished
    return x, res.iterations


def linf_regression(A, b):
    """min_x max_i |a_i x - b_i| through its LP dual (d+1 rows, 2n columns)."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, d = A.shape
    Aeq = np.vstack([np.hstack([-A.T, A.T]), np.ones((1, 2 * n))])
    beq = np.concatenate([np.zeros(d), [1.0]])
    c = np.concatenate([b, -b])
    res = solve_lp(c, Aeq, beq)
    x = -res.duals[:d]
    basic = res.basis[res.basis < 2 * n]
    if basic.size == d + 1:
        rows = basic % n
        signs = np.where(basic < n, -1.0, 1.0)   # u: a x - b = t ; v: b - a x = t
        sol = _polish(A, b, rows, signs=-signs)
        if sol is not None:
            cand = sol[:d]
            if np.max(np.abs(A @ cand - b)) <= np.max(np.abs(A @ x - b)) + 1e-12:
                x = cand
    return x, res.iterations


def _smoothed(r, delta, p):
    return float(np.sum((r * r + delta * delta) ** (p / 2)))


def irls(A, b, p: float, tol: float = 1e-10, max_iter: int = 500):
    """Smoothed IRLS for 1 < p < inf with a monotone line search.

    Minimizes  sum_i (r_i^2 + delta^2)^(p/2).  Each reweighted least-squares
    step is a descent direction; backtracking keeps the smoothed objective
    non-increasing, which is asserted at every step.  ``delta`` starts at
    1e-6 ||b||_p and is halved whenever progress stalls.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, d = A.shape
    bnorm = vector_pnorm(b, p)
    delta = 1e-6 * bnorm if bnorm > 0 else 1e-12
    delta_floor = 1e-14 * max(bnorm, 1.0)
    x = np.linalg.lstsq(A, b, rcond=None)[0]
    r = A @ x - b
    f = _smoothed(r, delta, p)
    history = [f]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = (r * r + delta * delta) ** ((p - 2) / 2)
        sw = np.sqrt(w)
        target = np.linalg.lstsq(A * sw[:, None], b * sw, rcond=None)[0]
        step = target - x
        t = 1.0
        while True:
            x_new = x + t * step
            r_new = A @ x_new - b
            f_new = _smoothed(r_new, delta, p)
            if f_new <= f or t < 1e-12:
                break
            t *= 0.5
        if f_new > f:
            x_new, r_new, f_new = x, r, f
        assert f_new <= f * (1 + 1e-15) + 1e-300, "smoothed objective increased"
        rel = (f - f_new) / max(f, 1e-300)
        x, r, f = x_new, r_new, f_new
        history.append(f)
        if rel < tol:
            if delta <= delta_floor:
                converged = True
                break
            delta = max(delta / 2, delta_floor)
            f_shrunk = _smoothed(r, delta, p)
            assert f_shrunk <= f * (1 + 1e-15) + 1e-300
            f = f_shrunk
            history.append(f)
            if np.max(np.abs(r)) <= 1e-13 * max(bnorm, 1.0):
                converged = True
                break
    return x, it, converged, history


def solve_lp_regression(inst: RegressionInstance, tol: float = 1e-10, max_iter: int = 500) -> RegressionSolution:
    """Exact lp regression: QR for p = 2, simplex for p = 1, smoothed IRLS otherwise."""
    p = inst.p.p
    A, b = inst.A, inst.b
    if inst.p.is_inf:
        return solve_linf_exact(inst)
    if p == 2:
        x = np.linalg.lstsq(A, b, rcond=None)[0]
        return RegressionSolution(x, inst.objective(x), "qr", 1)
    if p == 1:
        try:
            x, it = l1_regression(A, b)
        except LPError:
            raise
        return RegressionSolution(x, inst.objective(x), "simplex-l1", it)
    x, it, ok, hist = irls(A, b, p, tol=tol, max_iter=max_iter)
    return RegressionSolution(x, inst.objective(x), "irls", it, converged=ok, extra={"history": hist})


def solve_linf_exact(inst: RegressionInstance) -> RegressionSolution:
    x, it = linf_regression(inst.A, inst.b)
    return RegressionSolution(x, vector_pnorm(inst.A @ x - inst.b, math.inf), "simplex-linf", it)


# ------------------------------------------------------------ summary solvers


def _solve_on_rowspace(M: np.ndarray, rhs: np.ndarray, solver):
    """Run ``solver(M, rhs)`` in coordinates of the row space of ``M`` if it is rank deficient."""
    from .conditioning import column_reduction, numerical_rank

    d = M.shape[1]
    if M.shape[0] == 0 or numerical_rank(M) == 0:
        return np.zeros(d), 0
    if numerical_rank(M) == d and M.shape[0] >= d:
        return solver(M, rhs)
    Mr, V = column_reduction(M)
    y, it = solver(Mr, rhs)
    return V @ y, it


def _exact_solver(p: PNorm, tol: float, max_iter: int):
    def solve(M, rhs):
        sol = solve_lp_regression(RegressionInstance(M, rhs, p), tol, max_iter)
        return sol.x, sol.iterations

    return solve


def regress_via_embedding(inst: RegressionInstance, cfg, tol: float = 1e-12,
                          max_iter: int = 2000) -> RegressionSolution:
    """Solve the regression on a merge-and-reduce embedding of ``[A, b]``.

    With ``T = [T_A, t_b]`` and certified distortion ``D``, the minimizer of
    ``||T_A x - t_b||_p`` satisfies ``||A x - b||_p <= D * min ||A x - b||_p``.
    """
    from .embedding import TreeConfig, subspace_embed

    if not isinstance(cfg, TreeConfig):
        raise TypeError("cfg must be a TreeConfig")
    if cfg.p.p != inst.p.p:
        cfg = TreeConfig(cfg.gamma, cfg.block_rows, inst.p, cfg.wcb_method, cfg.seed)
    d = inst.A.shape[1]
    Z = np.hstack([inst.A, inst.b[:, None]])
    emb = subspace_embed(Z, cfg)
    T = emb.T
    x, it = _solve_on_rowspace(T[:, :d], T[:, d], _exact_solver(inst.p, tol, max_iter))
    return RegressionSolution(
        x, inst.objective(x), f"embedding-{cfg.wcb_method}", it,
        certified_gap=emb.certified_distortion,
        extra={"levels_used": emb.levels_used, "summary_rows": int(T.shape[0]),
               "nominal_gap": 1 / emb.total_lower_factor},
    )


def linf_rowspace(M: np.ndarray, rhs: np.ndarray):
    """l_inf regression restricted to the row space of ``M`` (``x = 0`` if ``M`` is empty)."""
    return _solve_on_rowspace(M, rhs, linf_regression)


def linf_additive_stream(stream, p, eps: float, method: str | None = None, seed: int = 0):
    """One-pass additive-error l_inf regression over rows ``[a_i, b_i]``.

    A row survives a prune if its local lp leverage within ``A`` is above
    ``eps / adjust^2`` or if ``|b_i| > eps * ||b_prefix||_p``, where the norm
    runs over the prefix of ``b`` seen so far. Surviving rows feed an exact
    l_inf solve. Returns ``(solution, state)``; ``solution.objective`` is the
    objective on the retained rows and ``certified_gap`` is ``eps * ||b||_p``.
    """
    from .leverage import SummaryState, block_basis, leverage_scores, prune_stream
    from .matcore import RowBlockStream, block_iter

    pn = as_pnorm(p)
    if pn.is_inf:
        raise ValueError("the leverage part needs a finite p")
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if method is None:
        method = "orth" if pn.p == 2 else "rounding"
    if not isinstance(stream, RowBlockStream):
        stream = block_iter(stream, 64)
    blocks = list(stream) if not isinstance(stream.source, np.ndarray) else stream
    width = stream.width
    if width is None:
        raise ValueError("empty stream")
    d = width - 1
    bmass = 0.0
    seen = 0
    info = {"adjust": 0.0, "threshold": 0.0, "cap": 0.0, "alpha": 0.0, "beta": 1.0, "certs": []}

    def select(X, o):
        nonlocal bmass, seen
        new = o >= seen
        bmass += float(np.sum(np.abs(X[new, d]) ** pn.p))
        seen = int(o.max()) + 1
        bnorm = bmass ** (1 / pn.p)
        keep = np.abs(X[:, d]) > eps * bnorm
        A = X[:, :d]
        if np.any(A):
            F, _ = block_basis(A, pn, method, seed, o)
            cert = F.cert
            info["alpha"] = max(info["alpha"], cert.alpha)
            info["beta"] = max(info["beta"], cert.beta)
            adjust = d * info["alpha"] ** pn.p * max(info["beta"], info["beta"] ** pn.p)
            thr = eps / adjust**2
            info["adjust"] = adjust
            info["threshold"] = thr
            info["cap"] = info["alpha"] ** pn.p / thr
            info["certs"].append(cert)
            keep |= leverage_scores(F) > thr
        return keep

    B, origin, max_rows, high, prunes = prune_stream(iter(blocks), select, width)
    x, it = linf_rowspace(B[:, :d], B[:, d])
    summary_obj = float(np.max(np.abs(B[:, :d] @ x - B[:, d]))) if B.shape[0] else 0.0
    bnorm = bmass ** (1 / pn.p)
    state = SummaryState(B, origin, stream.block_size, eps, info["adjust"], pn, method,
                         local_threshold=info["threshold"], cap=info["cap"],
                         max_rows=max_rows, high_water_rows=high, reductions=prunes,
                         certs=info["certs"])
    sol = RegressionSolution(x, summary_obj, "linf-summary", it, certified_gap=eps * bnorm,
                             extra={"b_norm": bnorm, "retained_rows": int(B.shape[0])})
    return sol, state


def linf_space_cap(alpha: float, beta: float, p: float, d: int, eps: float) -> float:
    """Retained-row bound ``d beta alpha^(2p) / (eps / (d alpha^p beta))``."""
    return d * beta * alpha ** (2 * p) / (eps / (d * alpha**p * beta))
