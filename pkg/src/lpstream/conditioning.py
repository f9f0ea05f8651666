"""Well-conditioned bases for lp column spaces, their certificates, and Lewis weights.

A factorization ``A = U @ S`` with ``U = A @ R`` is certified by a triple
``(alpha, beta, p)``: ``||U||_p <= alpha`` entrywise and
``||z||_q <= beta * ||U z||_p`` for every ``z``.

The ``orth`` and ``rounding`` constructions compute ``alpha`` exactly and
``beta`` from a closed-form inequality that holds for every ``z``, then
rescale ``U`` so that ``beta == 1``. Sampling (:func:`wcb_check`) is an
audit on top of that, not the source of the numbers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .matcore import PNorm, as_matrix, as_pnorm, col_pnorms, entrywise_pnorm, row_pnorms

RANK_TOL = 1e-10
METHODS = ("orth", "spc3", "rounding")


class RankDeficiencyError(ValueError):
    def __init__(self, rank: int, cols: int):
        self.rank = rank
        self.cols = cols
        super().__init__(f"matrix has numerical rank {rank} < {cols} columns")


class RoundingError(RuntimeError):
    """The rounding iteration hit its cap; ``cert`` holds the last iterate's certificate."""

    def __init__(self, message: str, cert: "WcbCertificate | None" = None):
        self.cert = cert
        super().__init__(message)


@dataclass(frozen=True)
class WcbCertificate:
    alpha: float
    beta: float
    p: PNorm
    method: str

    def adjust(self, d: int) -> float:
        """Local-to-global leverage divisor ``d * alpha^p * max(beta, beta^p)``.

        ``max(beta, beta^p)`` covers both the linear form and the Hoelder-exact
        form of the loss factor; they coincide for ``beta == 1``.
        """
        p = self.p.p
        return d * self.alpha**p * max(self.beta, self.beta**p)

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "p": str(self.p), "method": self.method}


@dataclass
class WcbFactorization:
    U: np.ndarray
    R: np.ndarray
    S: np.ndarray
    cert: WcbCertificate
    flags: dict = field(default_factory=dict)

    @property
    def rank(self) -> int:
        return self.U.shape[1]


@dataclass
class CheckResult:
    passed: bool
    worst_alpha_ratio: float
    worst_beta_ratio: float

    def __bool__(self) -> bool:
        return self.passed


def numerical_rank(A: np.ndarray, tol: float = RANK_TOL) -> int:
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[0] == 0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def column_reduction(A: np.ndarray, tol: float = RANK_TOL):
    """Return ``(A @ V, V)`` where the columns of ``V`` span the row space of ``A``.

    ``A @ V`` has full column rank and the same column space as ``A``, so
    leverage scores computed from it are those of ``A``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.size == 0:
        return A[:, :0], np.zeros((A.shape[1], 0))
    _, sv, Vt = np.linalg.svd(A, full_matrices=False)
    r = int(np.sum(sv > tol * sv[0])) if sv[0] > 0 else 0
    V = Vt[:r].T
    return A @ V, V


def _require_full_rank(A: np.ndarray) -> None:
    n, d = A.shape
    if n < d:
        raise RankDeficiencyError(numerical_rank(A), d)
    r = numerical_rank(A)
    if r < d:
        raise RankDeficiencyError(r, d)


def _qr(A: np.ndarray):
    Q, Rq = np.linalg.qr(A, mode="reduced")
    return Q, Rq


def _tri_inv(Rq: np.ndarray) -> np.ndarray:
    return sla.solve_triangular(Rq, np.eye(Rq.shape[0]), lower=False)


def wcb_orth(A) -> WcbFactorization:
    """Orthonormal basis by QR; certificate ``(sqrt(d), 1, 2)``."""
    A = as_matrix(A, "A")
    _require_full_rank(A)
    d = A.shape[1]
    Q, Rq = _qr(A)
    cert = WcbCertificate(math.sqrt(d), 1.0, PNorm(2), "orth")
    return WcbFactorization(Q, _tri_inv(Rq), Rq, cert, {"l2_lower": 1.0})


# ---------------------------------------------------------------- Lewis weights


@dataclass
class LewisResult:
    weights: np.ndarray
    iterations: int
    converged: bool
    regularized: bool
    residual: float


def _gram_factor(A: np.ndarray, scale: np.ndarray):
    """Cholesky factor of ``A^T diag(scale) A``; regularizes by 1e-12 trace if singular."""
    M = A.T @ (A * scale[:, None])
    try:
        return np.linalg.cholesky(M), False
    except np.linalg.LinAlgError:
        bump = 1e-12 * max(np.trace(M), np.finfo(float).tiny)
        return np.linalg.cholesky(M + bump * np.eye(M.shape[0])), True


def _quad_forms(A: np.ndarray, L: np.ndarray) -> np.ndarray:
    """``a_i^T (L L^T)^{-1} a_i`` for every row."""
    Y = sla.solve_triangular(L, A.T, lower=True)
    return np.einsum("ij,ij->j", Y, Y)


def _lewis_map(A, w, p, live):
    scale = np.zeros_like(w)
    scale[live] = w[live] ** (1 - 2 / p)
    L, reg = _gram_factor(A, scale)
    tau = _quad_forms(A, L)
    f = np.zeros_like(w)
    f[live] = tau[live] ** (p / 2)
    return f, tau, L, reg


def lewis_weights_full(A, p, iters: int = 1000, tol: float = 1e-10) -> LewisResult:
    """Fixed-point iteration for lp Lewis weights of any finite ``p >= 1``.

    For ``p <= 2`` the plain map is a contraction. For ``p > 2`` the update is
    damped geometrically, ``w <- w^(1-t) f(w)^t`` with ``t = 4/(p+2)``, which
    keeps the linearized map a contraction. Stops once the fixed-point
    residual ``max |f(w)_i - w_i| / w_i`` is below ``tol``; the returned
    weights are the iterate whose residual was measured.
    """
    A = as_matrix(A, "A")
    pn = as_pnorm(p)
    if pn.is_inf:
        raise ValueError("Lewis weights need a finite p")
    p = pn.p
    n, d = A.shape
    live = row_pnorms(A, 2) > 0
    w = np.where(live, d / max(int(live.sum()), 1), 0.0)
    theta = 1.0 if p <= 2 else 4.0 / (p + 2)
    regularized = False
    resid = math.inf
    it = 0
    for it in range(1, iters + 1):
        f, _, _, reg = _lewis_map(A, w, p, live)
        regularized |= reg
        resid = float(np.max(np.abs(f[live] - w[live]) / w[live])) if live.any() else 0.0
        if resid < tol:
            return LewisResult(w, it, True, regularized, resid)
        if theta == 1.0:
            w = f
        else:
            w = np.where(live, w ** (1 - theta) * np.maximum(f, 1e-300) ** theta, 0.0)
    return LewisResult(w, it, False, regularized, resid)


def lewis_weights(A, p, iters: int = 1000, tol: float = 1e-10) -> np.ndarray:
    """lp Lewis weights; warns if the Gram matrix needed regularization."""
    res = lewis_weights_full(A, p, iters, tol)
    if res.regularized:
        warnings.warn("singular Gram matrix during Lewis iteration; regularized by 1e-12 trace",
                      RuntimeWarning, stacklevel=2)
    return res.weights


def lewis_residual(A, w, p) -> float:
    """Relative fixed-point residual ``max_i |f(w)_i - w_i| / w_i`` over nonzero rows."""
    A = as_matrix(A, "A")
    p = as_pnorm(p).p
    w = np.asarray(w, dtype=np.float64)
    live = w > 0
    f, _, _, _ = _lewis_map(A, w, p, live)
    return float(np.max(np.abs(f[live] - w[live]) / w[live]))


# ------------------------------------------------------------ rigorous bounds


def lower_l2_constant(U: np.ndarray, p: float) -> float:
    """A constant ``c`` with ``||U y||_p >= c ||y||_2`` for all ``y`` (from the SVD)."""
    n = U.shape[0]
    smin = np.linalg.svd(U, compute_uv=False)[-1]
    if p >= 2 and n > 0:
        smin *= n ** (1 / p - 1 / 2)
    return float(smin)


def _q_over_2(d: int, p: float) -> float:
    """Smallest ``k`` with ``||y||_q <= k ||y||_2`` in dimension ``d``."""
    q = PNorm(p).q
    inv_q = 0.0 if math.isinf(q) else 1 / q
    return max(1.0, d ** (inv_q - 0.5))


def _normalize(U0, R0, c_low, p, method, flags=None) -> WcbFactorization:
    """Scale ``U0`` so the rigorous beta equals 1; alpha is the exact entrywise norm."""
    d = U0.shape[1]
    s = _q_over_2(d, p) / c_low
    U = U0 * s
    R = R0 * s
    S = np.linalg.inv(R)
    alpha = entrywise_pnorm(U, p)
    flags = dict(flags or {})
    flags["l2_lower"] = s * c_low
    return WcbFactorization(U, R, S, WcbCertificate(alpha, 1.0, PNorm(p), method), flags)


def recertify(F: WcbFactorization, p) -> WcbFactorization:
    """Re-express ``F``'s basis at norm ``p`` with exact alpha and rigorous beta = 1."""
    p = as_pnorm(p).p
    flags = dict(F.flags)
    c = flags.pop("l2_lower", None)
    if c is None or p > 2:
        c = lower_l2_constant(F.U, p)
    return _normalize(F.U, F.R, c, p, F.cert.method, flags)


def upper_distortion(U: np.ndarray, p) -> float:
    """A constant ``D`` with ``||U y||_p <= D ||y||_p`` for all ``y`` (Hoelder over columns)."""
    pn = as_pnorm(p)
    if pn.p == 2:
        # exact operator norm
        return float(np.linalg.svd(U, compute_uv=False)[0]) if U.size else 0.0
    return float(np.linalg.norm(col_pnorms(U, pn.p), ord=pn.q))


def lower_pnorm_constant(F: WcbFactorization) -> float:
    """A constant ``L`` with ``||U y||_p >= L ||y||_p`` for all ``y``, from beta."""
    p = F.cert.p.p
    d = F.U.shape[1]
    # ||y||_p <= k ||y||_q with k = d^(1/p - 1/q) when p <= q
    inv_q = 0.0 if math.isinf(F.cert.p.q) else 1 / F.cert.p.q
    k = max(1.0, d ** (1 / p - inv_q))
    return 1.0 / (k * F.cert.beta)


# ------------------------------------------------------------------ rounding


def wcb_rounding(A, p, tol: float = 1e-6, max_iter: int | None = None) -> WcbFactorization:
    """Basis from QR followed by Lewis-weight ellipsoidal rounding.

    With weights ``w`` and ``M = Q^T W^(1-2/p) Q``, the map ``y -> Q M^(-1/2) y``
    is an approximate lp isometry from l2. Its lower constant is bounded in
    closed form for any positive weights, so the certificate stays valid even
    when the iteration stops early.
    """
    A = as_matrix(A, "A")
    pn = as_pnorm(p)
    if pn.is_inf:
        raise ValueError("rounding bases need a finite p")
    _require_full_rank(A)
    n, d = A.shape
    p = pn.p
    Q, Rq = _qr(A)
    Rq_inv = _tri_inv(Rq)
    if p == 2:
        F = _normalize(Q, Rq_inv, 1.0, 2.0, "rounding")
        return F
    cap = max_iter if max_iter is not None else 500 * d
    res = lewis_weights_full(Q, p, iters=cap, tol=tol)
    w = res.weights
    live = w > 0
    f, tau, L, reg = _lewis_map(Q, w, p, live)
    # R0 = L^{-T} so that ||Q R0 y||_M-weighted l2 equals ||y||_2
    R0 = sla.solve_triangular(L.T, np.eye(d), lower=False)
    U0 = Q @ R0
    if p > 2:
        c_low = float(np.sum(w)) ** (1 / p - 1 / 2)
    else:
        ratio = np.ones_like(w)
        ratio[live] = tau[live] ** (p / 2) / w[live]
        K = float(np.max(ratio[live])) ** ((2 - p) / p) if live.any() else 1.0
        c_low = K ** (-1 / p)
    F = _normalize(U0, Rq_inv @ R0, c_low, p, "rounding",
                   {"lewis_iterations": res.iterations, "regularized": reg or res.regularized})
    if not res.converged:
        raise RoundingError(f"rounding did not converge in {cap} iterations "
                            f"(residual {res.residual:.3g})", F.cert)
    return F


# ---------------------------------------------------------------------- SPC3

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def counter_hash(seed: int, rows: np.ndarray, salt: int) -> np.ndarray:
    """Counter-based 64-bit hash of ``(seed, row, salt)``; independent of call order."""
    with np.errstate(over="ignore"):
        key = _splitmix(np.full(rows.shape, np.uint64(seed & 0xFFFFFFFFFFFFFFFF)))
        key = _splitmix(key ^ rows.astype(np.uint64))
        return _splitmix(key ^ np.uint64(salt & 0xFFFFFFFFFFFFFFFF))


def _unit(h: np.ndarray) -> np.ndarray:
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def cauchy_variates(seed: int, rows: np.ndarray, stream: int = 0) -> np.ndarray:
    """Standard Cauchy draws via ratio-of-uniforms on the unit half-disk."""
    rows = np.asarray(rows, dtype=np.int64)
    out = np.empty(rows.shape[0])
    todo = np.arange(rows.shape[0])
    attempt = 0
    while todo.size:
        base = 4 * (stream * 4096 + attempt)
        u = 2 * _unit(counter_hash(seed, rows[todo], base + 1)) - 1
        v = _unit(counter_hash(seed, rows[todo], base + 2))
        ok = (u * u + v * v <= 1) & (v > 0)
        out[todo[ok]] = u[ok] / v[ok]
        todo = todo[~ok]
        attempt += 1
    return out


def spc3_sketch(A: np.ndarray, seed: int, rows: int, origin: np.ndarray | None = None,
                attempt: int = 0) -> np.ndarray:
    """Apply a sparse Cauchy embedding with one nonzero per input row."""
    n = A.shape[0]
    idx = np.arange(n, dtype=np.int64) if origin is None else np.asarray(origin, dtype=np.int64)
    bucket = (counter_hash(seed, idx, 4 * (1 << 20) + attempt) % np.uint64(rows)).astype(np.int64)
    c = cauchy_variates(seed, idx, stream=attempt)
    out = np.zeros((rows, A.shape[1]))
    np.add.at(out, bucket, A * c[:, None])
    return out


def spc3_rows(d: int) -> int:
    return int(math.ceil(8 * d * math.log2(d + 1)))


def wcb_spc3(A, seed: int = 0, origin=None, attempts: int = 3) -> WcbFactorization:
    """l1 basis from QR of a sparse Cauchy sketch; nominal certificate ``(d^2.5, 1, 1)``.

    The certificate is the method's advertised one and holds with high
    probability only; audit it with :func:`wcb_check`.
    """
    A = as_matrix(A, "A")
    _require_full_rank(A)
    d = A.shape[1]
    r = spc3_rows(d)
    for k in range(attempts):
        PA = spc3_sketch(A, seed + k, r, origin)
        if numerical_rank(PA) < d:
            continue
        _, Rt = _qr(PA)
        R = _tri_inv(Rt)
        cert = WcbCertificate(d**2.5, 1.0, PNorm(1), "spc3")
        return WcbFactorization(A @ R, R, Rt, cert, {"seed_used": seed + k})
    raise RankDeficiencyError(numerical_rank(PA), d)


# ------------------------------------------------------------------- dispatch


def wcb(A, p, method: str = "rounding", seed: int = 0, origin=None,
        attempts: int = 3) -> WcbFactorization:
    """Well-conditioned basis for ``A`` at norm ``p`` using ``method``.

    ``orth`` at ``p != 2`` and ``spc3`` at ``p != 1`` are recertified at ``p``.
    """
    pn = as_pnorm(p)
    if method == "orth":
        F = wcb_orth(A)
        return F if pn.p == 2 else recertify(F, pn)
    if method == "rounding":
        return wcb_rounding(A, pn)
    if method == "spc3":
        F = wcb_spc3(A, seed, origin, attempts)
        return F if pn.p == 1 else recertify(F, pn)
    raise ValueError(f"unknown wcb method {method!r}; choose from {METHODS}")


def _gen_gaussian(rng: np.random.Generator, shape, q: float) -> np.ndarray:
    """Draws with density proportional to exp(-|x|^q); uniform on [-1, 1] for q = inf."""
    if math.isinf(q):
        return rng.uniform(-1, 1, size=shape)
    mag = rng.gamma(1 / q, 1.0, size=shape) ** (1 / q)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def wcb_check(F: WcbFactorization, n_samples: int = 1000, seed: int = 0,
              slack: float = 1e-9) -> CheckResult:
    """Audit a certificate: exact alpha test plus sampled beta test.

    Directions are ``n_samples`` generalized-Gaussian draws normalized to the
    unit q-sphere together with all ``+-e_i``. A ratio above ``1 + slack``
    fails.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    cert = F.cert
    p, q = cert.p.p, cert.p.q
    U = F.U
    d = U.shape[1]
    alpha_ratio = entrywise_pnorm(U, p) / cert.alpha
    rng = np.random.default_rng(seed)
    Z = _gen_gaussian(rng, (n_samples, d), q)
    Z = np.vstack([Z, np.eye(d), -np.eye(d)])
    zq = row_pnorms(Z, q)
    keep = zq > 0
    Z, zq = Z[keep] / zq[keep, None], np.ones(int(keep.sum()))
    Uz = row_pnorms(Z @ U.T, p)
    with np.errstate(divide="ignore"):
        beta_ratio = float(np.max(zq / (cert.beta * Uz)))
    ok = alpha_ratio <= 1 + slack and beta_ratio <= 1 + slack
    return CheckResult(bool(ok), float(alpha_ratio), beta_ratio)
