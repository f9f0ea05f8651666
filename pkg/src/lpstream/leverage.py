"""lp leverage scores, threshold pruning, and single-pass high-leverage row extraction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .conditioning import (
    RankDeficiencyError,
    WcbCertificate,
    WcbFactorization,
    column_reduction,
    numerical_rank,
    wcb,
)
from .matcore import PNorm, RowBlockStream, as_matrix, as_pnorm, block_iter, row_pnorms


class SummaryInvariantError(RuntimeError):
    """A retained-row count exceeded its proven cap."""


@dataclass
class LeverageReport:
    scores: np.ndarray
    p: PNorm
    cert: WcbCertificate
    threshold: float
    kept: np.ndarray

    def to_json(self, tau: float | None = None, adjust: float | None = None) -> dict:
        s = self.scores
        return {
            "p": str(self.p),
            "method": self.cert.method,
            "tau": self.threshold if tau is None else tau,
            "adjust": adjust,
            "threshold": self.threshold,
            "kept_indices": [int(i) for i in self.kept],
            "scores_summary": {
                "min": float(s.min()) if s.size else 0.0,
                "max": float(s.max()) if s.size else 0.0,
                "sum": float(s.sum()),
            },
            "cert": self.cert.to_json(),
        }


def leverage_scores(F: WcbFactorization) -> np.ndarray:
    """``w_i = ||row_i(U)||_p^p``."""
    p = F.cert.p
    if p.is_inf:
        raise ValueError("leverage scores need a finite p")
    return row_pnorms(F.U, p.p) ** p.p


def lev_score_check(F: WcbFactorization, W, tau: float):
    """Rows of ``W`` whose score under ``F`` is strictly above ``tau``, in order."""
    W = np.asarray(W, dtype=np.float64)
    if F.U.shape[0] != W.shape[0]:
        raise ValueError(f"basis has {F.U.shape[0]} rows but W has {W.shape[0]}")
    if tau < 0:
        raise ValueError("tau must be >= 0")
    idx = np.flatnonzero(leverage_scores(F) > tau)
    return W[idx], idx


def leverage_report(A, p, tau: float, method: str = "rounding", seed: int = 0) -> LeverageReport:
    """Offline scores for all of ``A`` and the rows above ``tau``."""
    A = as_matrix(A, "A")
    F = wcb(A, p, method, seed)
    w = leverage_scores(F)
    return LeverageReport(w, F.cert.p, F.cert, float(tau), np.flatnonzero(w > tau))


# short merged blocks make sketch collisions likely, so streams allow more redraws
STREAM_SKETCH_ATTEMPTS = 16


def block_basis(X: np.ndarray, p, method: str, seed: int = 0, origin=None) -> tuple[WcbFactorization, bool]:
    """Basis for the column space of ``X``, reducing columns first if ``X`` is rank deficient.

    Returns the factorization and whether a column reduction was needed.
    """
    d = X.shape[1]
    r = numerical_rank(X)
    if r == 0:
        raise RankDeficiencyError(0, d)
    reduced = not (r == d and X.shape[0] >= d)
    if reduced:
        X, _ = column_reduction(X)
    return wcb(X, p, method, seed, origin, attempts=STREAM_SKETCH_ATTEMPTS), reduced


# ----------------------------------------------------------------- streaming


@dataclass
class SummaryState:
    B: np.ndarray
    origin: np.ndarray
    budget_rows: int
    tau: float
    adjust: float
    p: PNorm
    method: str
    local_threshold: float = 0.0
    cap: float = float("inf")
    max_rows: int = 0
    high_water_rows: int = 0
    reductions: int = 0
    rank_reduced_blocks: int = 0
    certs: list = field(default_factory=list)

    @property
    def rows(self) -> int:
        return self.B.shape[0]

    def to_json(self) -> dict:
        return {
            "p": str(self.p),
            "method": self.method,
            "tau": self.tau,
            "adjust": self.adjust,
            "local_threshold": self.local_threshold,
            "kept_indices": [int(i) for i in self.origin],
            "max_rows": self.max_rows,
            "cap": self.cap,
            "reductions": self.reductions,
        }


Selector = Callable[[np.ndarray, np.ndarray], np.ndarray]


def prune_stream(blocks: Iterable[np.ndarray], select: Selector, width: int,
                 budget: int | None = None):
    """Generic one-pass prune loop shared by every row-retention summary.

    Without ``budget`` each incoming block is merged with the retained rows
    and pruned. With ``budget`` rows are buffered until retained plus pending
    rows reach ``budget``, which is the fixed-space protocol used in the
    experiments. ``select(X, origin)`` returns a boolean keep mask.

    Returns ``(B, origin, max_rows_after_prune, high_water_rows, prunes)``.
    """
    B = np.zeros((0, width))
    origin = np.zeros(0, dtype=np.int64)
    pending: list[np.ndarray] = []
    npending = 0
    seen = 0
    max_rows = high = prunes = 0

    def prune(B, origin, new):
        nonlocal max_rows, high, prunes, seen
        idx = np.arange(seen, seen + new.shape[0], dtype=np.int64)
        seen += new.shape[0]
        X = np.vstack([B, new])
        o = np.concatenate([origin, idx])
        high = max(high, X.shape[0])
        mask = np.asarray(select(X, o), dtype=bool)
        prunes += 1
        B, origin = X[mask], o[mask]
        max_rows = max(max_rows, B.shape[0])
        return B, origin

    for blk in blocks:
        blk = np.asarray(blk, dtype=np.float64)
        if blk.shape[0] == 0:
            continue
        if blk.shape[1] != width:
            raise ValueError(f"block has {blk.shape[1]} columns, expected {width}")
        if budget is None:
            B, origin = prune(B, origin, blk)
            continue
        start = 0
        while start < blk.shape[0]:
            room = max(budget - B.shape[0] - npending, 1)
            take = blk[start:start + room]
            pending.append(take)
            npending += take.shape[0]
            start += take.shape[0]
            if B.shape[0] + npending >= budget:
                B, origin = prune(B, origin, np.vstack(pending))
                pending, npending = [], 0
    if pending:
        B, origin = prune(B, origin, np.vstack(pending))
    return B, origin, max_rows, high, prunes


def stream_high_leverage(stream, p, tau: float, method: str = "rounding", seed: int = 0,
                         budget: int | None = None) -> SummaryState:
    """One pass over row blocks keeping rows whose global lp leverage may exceed ``tau``.

    Every block is merged with the rows kept so far, a basis of the merge is
    computed and rows with local score above ``tau / adjust`` survive, where
    ``adjust = d * alpha^p * max(beta, beta^p)`` uses the largest local alpha
    seen so far. Kept rows keep their original values.

    With ``budget = m`` the fixed-space protocol is used instead: the buffer
    fills to ``m`` rows and the local threshold is ``alpha^p / m`` with the
    measured ``alpha = ||U||_p`` of the block basis.
    """
    pn = as_pnorm(p)
    if pn.is_inf:
        raise ValueError("stream_high_leverage needs a finite p")
    if not tau > 0 and budget is None:
        raise ValueError("tau must be > 0")
    if not isinstance(stream, RowBlockStream):
        stream = block_iter(stream, max(budget or 0, 1) if budget else 64)
    it = iter(stream)
    first = next(it, None)
    width = stream.width if first is None else first.shape[1]
    if width is None:
        width = 0
    d = width
    if budget is None and first is not None and stream.block_size < d:
        raise ValueError(f"block size {stream.block_size} is smaller than d = {d}")

    state = SummaryState(np.zeros((0, d)), np.zeros(0, dtype=np.int64),
                         stream.block_size if budget is None else budget,
                         float(tau), 0.0, pn, method)
    alpha_ref = 0.0

    def select(X, o):
        nonlocal alpha_ref
        if numerical_rank(X) == 0:
            return np.zeros(X.shape[0], dtype=bool)
        F, reduced = block_basis(X, pn, method, seed, o)
        state.rank_reduced_blocks += int(reduced)
        cert = F.cert
        w = leverage_scores(F)
        # a nominal alpha can undershoot; the audited one never does
        alpha = max(cert.alpha, float(w.sum()) ** (1 / pn.p))
        if budget is None:
            alpha_ref = max(alpha_ref, alpha)
            ref = WcbCertificate(alpha_ref, cert.beta, cert.p, cert.method)
            adjust = ref.adjust(d)
            thr = tau / adjust
            cap = alpha_ref**pn.p / thr
            state.adjust = max(state.adjust, adjust)
        else:
            # measured alpha: equals the certificate for exact certificates
            thr = float(w.sum()) / budget
            cap = budget
        state.local_threshold = thr
        state.cap = cap
        state.certs.append(cert)
        keep = w > thr
        if keep.sum() > cap * (1 + 1e-9) + 1e-9:
            raise SummaryInvariantError(f"kept {int(keep.sum())} rows, above the cap {cap:.6g}")
        return keep

    def blocks():
        if first is not None:
            yield first
        yield from it

    B, origin, max_rows, high, prunes = prune_stream(blocks(), select, d, budget)
    state.B, state.origin = B, origin
    state.max_rows, state.high_water_rows, state.reductions = max_rows, high, prunes
    return state


def kept_rows_cap(cert: WcbCertificate, tau: float, d: int) -> float:
    """Upper bound ``alpha^p / (tau / adjust)`` on rows kept at global threshold ``tau``."""
    return cert.alpha ** cert.p.p * cert.adjust(d) / tau


def local_global_gap(A, block_rows, p, method: str = "rounding", seed: int = 0):
    """Global and local scores for the rows of one block.

    Returns ``(w, w_hat, global_cert, local_cert)`` with ``w[k]`` the global score
    of the ``k``-th listed row and ``w_hat[k]`` its score inside the block.
    """
    A = as_matrix(A, "A")
    idx = np.asarray(block_rows, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("block must be nonempty")
    Fg = wcb(A, p, method, seed)
    blk = A[idx]
    r = numerical_rank(blk)
    if r < A.shape[1] or blk.shape[0] < A.shape[1]:
        raise RankDeficiencyError(r, A.shape[1])
    Fl = wcb(blk, p, method, seed, origin=idx)
    return leverage_scores(Fg)[idx], leverage_scores(Fl), Fg.cert, Fl.cert


# ------------------------------------------------------------------ baselines


def surrogate_scores(B) -> np.ndarray:
    """Squared row norms over the squared Frobenius norm."""
    B = np.asarray(B, dtype=np.float64)
    sq = np.einsum("ij,ij->i", B, B)
    total = sq.sum()
    if total == 0:
        raise ValueError("surrogate scores are undefined for the zero matrix")
    return sq / total


def uniform_sample(stream, m: int, seed: int = 0):
    """Reservoir sample of ``min(m, n)`` rows; returns ``(rows, origin)`` in origin order."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if not isinstance(stream, RowBlockStream):
        stream = block_iter(stream, 1024)
    rng = np.random.default_rng(seed)
    res: list[np.ndarray] = []
    org: list[int] = []
    t = 0
    width = stream.width or 0
    for blk in stream:
        width = blk.shape[1]
        for row in blk:
            if t < m:
                res.append(row.copy())
                org.append(t)
            else:
                j = int(rng.integers(0, t + 1))
                if j < m:
                    res[j] = row.copy()
                    org[j] = t
            t += 1
    if not res:
        return np.zeros((0, width)), np.zeros(0, dtype=np.int64)
    order = np.argsort(org, kind="stable")
    return np.vstack(res)[order], np.asarray(org, dtype=np.int64)[order]
