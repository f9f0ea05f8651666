"""Entrywise l1 low-rank approximation: a candidate-search inner solver and its merge-and-reduce tree.

A candidate is a pair ``(C, S)`` of ``k`` column indices and ``k`` row
indices. It proposes the skeleton ``X[:, C] @ inv(X[S, C]) @ X[S, :]``, which
has rank at most ``k``. The inner solver scores candidates on the full matrix
and keeps the best one, then optionally refines it by alternating exact l1
fits of the two factors.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .conditioning import column_reduction, lewis_weights_full, numerical_rank, wcb_rounding
from .embedding import TreeConfig
from .matcore import RowBlockStream, as_matrix, block_iter, col_pnorms
from .regression import l1_regression

DEFAULT_CAPS = {"d": 8, "k": 2, "n": 64}


class CapError(ValueError):
    pass


@dataclass
class LowRankResult:
    left: np.ndarray
    right: np.ndarray
    k: int
    l1_error: float
    inner_method: str
    flags: dict = field(default_factory=dict)

    def product(self) -> np.ndarray:
        return self.left @ self.right


# ------------------------------------------------------------- exact l1 fits


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Column-wise lower weighted median; zero-weight entries are ignored."""
    order = np.argsort(values, axis=0, kind="stable")
    v = np.take_along_axis(values, order, axis=0)
    w = np.take_along_axis(weights, order, axis=0)
    cw = np.cumsum(w, axis=0)
    half = cw[-1] / 2
    idx = np.argmax(cw >= half[None, :] - 1e-15 * np.maximum(half, 1)[None, :], axis=0)
    out = v[idx, np.arange(v.shape[1])]
    return np.where(cw[-1] > 0, out, 0.0)


def l1_fit(design: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Coefficients ``c`` (k x t) minimizing ``sum |design @ c - targets|`` column by column.

    k = 1 is a weighted median. k = 2 with at most 64 equations enumerates
    the vertices, i.e. every pair of equations solved exactly. Larger cases
    use the simplex solver.
    """
    D = np.asarray(design, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    m, k = D.shape
    t = Y.shape[1]
    if k == 0 or m == 0:
        return np.zeros((k, t))
    if k == 1:
        v = D[:, 0]
        nz = np.abs(v) > 0
        if not nz.any():
            return np.zeros((1, t))
        ratios = Y[nz] / v[nz, None]
        weights = np.broadcast_to(np.abs(v[nz])[:, None], ratios.shape)
        return _weighted_median(ratios, np.ascontiguousarray(weights))[None, :]
    if k == 2 and m <= 64:
        i, j = np.triu_indices(m, 1)
        a, b = D[i], D[j]
        det = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
        ok = np.abs(det) > 1e-12 * (np.abs(a).sum(1) * np.abs(b).sum(1) + 1e-300)
        best = np.zeros((2, t))
        if ok.any():
            a, b, det = a[ok], b[ok], det[ok]
            yi, yj = Y[i[ok]], Y[j[ok]]
            c0 = (yi * b[:, 1:2] - yj * a[:, 1:2]) / det[:, None]
            c1 = (a[:, 0:1] * yj - b[:, 0:1] * yi) / det[:, None]
            # residual of every vertex, shape (pairs, m, t)
            res = np.abs(D[None, :, 0:1] * c0[:, None, :] + D[None, :, 1:2] * c1[:, None, :] - Y[None])
            cost = res.sum(axis=1)
            pick = np.argmin(cost, axis=0)
            best = np.vstack([c0[pick, np.arange(t)], c1[pick, np.arange(t)]])
        # rank-1 designs have no nonsingular pair; fall back to a one-column fit
        single = l1_fit(D[:, :1], Y)
        cost_best = np.abs(D @ best - Y).sum(0)
        cost_single = np.abs(D[:, :1] @ single - Y).sum(0)
        use = cost_single < cost_best
        if use.any():
            best[:, use] = np.vstack([single[:, use], np.zeros((1, int(use.sum())))])
        return best
    out = np.zeros((k, t))
    if numerical_rank(D) < k:
        Dr, V = column_reduction(D)
        return V @ l1_fit(Dr, Y)
    for col in range(t):
        out[:, col] = l1_regression(D, Y[:, col])[0]
    return out


def l1_error(X: np.ndarray, left: np.ndarray, right: np.ndarray) -> float:
    return float(np.abs(X - left @ right).sum())


def alternate(X: np.ndarray, left: np.ndarray, right: np.ndarray, rounds: int = 10):
    """Alternating exact l1 fits: rows of ``left`` given ``right``, then columns of ``right``.

    Each half-step is optimal for its factor, so the error never increases.
    """
    err = l1_error(X, left, right)
    for _ in range(rounds):
        new_left = l1_fit(right.T, X.T).T
        new_right = l1_fit(new_left, X)
        new_err = l1_error(X, new_left, new_right)
        if new_err >= err - 1e-12 * max(err, 1.0):
            if new_err < err:
                left, right, err = new_left, new_right, new_err
            break
        left, right, err = new_left, new_right, new_err
    return left, right, err


# ---------------------------------------------------------------- candidates


def rounded_probabilities(weights: np.ndarray, n: int, d: int) -> np.ndarray:
    """Sampling probabilities from weights, rounded down to powers of 2 in ``[1/(n d), 1]``."""
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        return np.full(w.shape, 1.0 / max(n * d, 1))
    prob = np.clip(w / w.max(), 1.0 / (n * d), 1.0)
    return 2.0 ** np.floor(np.log2(prob))


def _skeleton_scores(X: np.ndarray, C: tuple, S_list: np.ndarray) -> np.ndarray:
    """Full l1 error of the skeleton for one column set and many row sets."""
    XC = X[:, list(C)]
    k = len(C)
    if k == 1:
        piv = XC[S_list[:, 0], 0]
        ok = np.abs(piv) > 1e-12 * np.abs(XC).max(initial=0) + 1e-300
        err = np.full(S_list.shape[0], np.inf)
        if ok.any():
            rows = X[S_list[ok, 0]] / piv[ok, None]
            approx = XC[None, :, 0:1] * rows[:, None, :]
            err[ok] = np.abs(X[None] - approx).sum(axis=(1, 2))
        return err
    M = XC[S_list]  # (m, k, k)
    det = np.linalg.det(M)
    scale = np.abs(M).reshape(M.shape[0], -1).max(axis=1) ** k + 1e-300
    ok = np.abs(det) > 1e-12 * scale
    err = np.full(S_list.shape[0], np.inf)
    if ok.any():
        Minv = np.linalg.inv(M[ok])
        XS = X[S_list[ok]]  # (m, k, d)
        mid = Minv @ XS  # (m, k, d)
        approx = np.einsum("nk,mkd->mnd", XC, mid)
        err[ok] = np.abs(X[None] - approx).sum(axis=(1, 2))
    return err


def _skeleton_factors(X: np.ndarray, C: tuple, S: tuple):
    XC = X[:, list(C)]
    mid = np.linalg.solve(XC[list(S)], X[list(S)])
    return XC.copy(), mid


def _zero(X: np.ndarray, k: int, mode: str, flags: dict) -> LowRankResult:
    n, d = X.shape
    return LowRankResult(np.zeros((n, k)), np.zeros((k, d)), k, float(np.abs(X).sum()), mode, flags)


def l1_rank_k_inner(X, k: int, mode: str = "enumerated", seed: int = 0, caps: dict | None = None,
                    samples: int = 200, refine: int = 10) -> LowRankResult:
    """Best rank-``k`` skeleton under the full entrywise l1 error.

    ``enumerated`` scores every ``(C, S)`` pair and is deterministic; it
    needs ``d``, ``k`` and ``n`` within ``caps``. ``randomized`` scores
    ``samples`` pairs: ``C`` uniform, ``S`` drawn with probabilities from
    rounded l1 Lewis weights of ``X[:, C]``. The zero matrix is always a
    candidate, and ties go to the earliest candidate. ``refine`` alternating
    rounds are then applied to the winner.
    """
    X = as_matrix(X, "X")
    n, d = X.shape
    caps = {**DEFAULT_CAPS, **(caps or {})}
    if k < 1:
        raise ValueError("k must be >= 1")
    if mode not in ("enumerated", "randomized"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "enumerated" and (d > caps["d"] or k > caps["k"] or n > caps["n"]):
        raise CapError(f"enumeration caps exceeded (n={n}, d={d}, k={k}; caps {caps}); "
                       "use mode='randomized'")
    flags: dict = {"candidates": 0}
    kk = min(k, n, d)
    if kk == 0 or not np.any(X):
        return _zero(X, k, mode, flags)
    best = (float(np.abs(X).sum()), None, None)  # zero candidate first
    col_sets = list(itertools.combinations(range(d), kk))
    if mode == "enumerated":
        row_sets = np.array(list(itertools.combinations(range(n), kk)), dtype=np.int64)
        for C in col_sets:
            err = _skeleton_scores(X, C, row_sets)
            flags["candidates"] += err.size
            j = int(np.argmin(err))
            if err[j] < best[0]:
                best = (float(err[j]), C, tuple(int(r) for r in row_sets[j]))
    else:
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            C = col_sets[int(rng.integers(len(col_sets)))]
            XC = X[:, list(C)]
            live = np.abs(XC).sum(axis=1) > 0
            if live.sum() < kk:
                continue
            if numerical_rank(XC) == kk:
                w = lewis_weights_full(XC, 1, iters=200, tol=1e-6).weights
            else:
                w = np.abs(XC).sum(axis=1)
            prob = rounded_probabilities(w, n, d) * live
            S = np.sort(rng.choice(n, size=kk, replace=False, p=prob / prob.sum()))
            err = _skeleton_scores(X, C, S[None, :])[0]
            flags["candidates"] += 1
            if err < best[0]:
                best = (float(err), C, tuple(int(r) for r in S))
    err, C, S = best
    if C is None:
        res = _zero(X, k, mode, flags)
        left, right = res.left, res.right
    else:
        left, right = _skeleton_factors(X, C, S)
        flags["columns"], flags["rows"] = list(C), list(S)
    if refine and C is not None:
        left, right, err = alternate(X, left, right, refine)
    if kk < k:
        left = np.hstack([left, np.zeros((n, k - kk))])
        right = np.vstack([right, np.zeros((k - kk, d))])
        flags["padded"] = True
    return LowRankResult(left, right, k, l1_error(X, left, right), mode, flags)


# ------------------------------------------------------------------ reduction


@dataclass
class DecomposeReport:
    U: np.ndarray
    S: np.ndarray
    c: float
    min_ratio: float
    max_ratio: float
    rank: int
    flagged: bool


def l1_decompose_wcb(W, n_samples: int = 500, seed: int = 0) -> DecomposeReport:
    """Factor ``W = U S`` with ``||W x||_1 / ||S x||_1`` in ``[1/c, c]`` for all ``x``.

    ``U`` is an l1 rounding basis rescaled so the sampled ratios are centered
    on 1. ``c = max(D, 1/L)`` with ``D``
    the largest column l1 norm and ``L`` the certified lower constant. The
    sampled ratios are asserted to lie inside the certified range.
    """
    W = as_matrix(W, "W")
    n, k = W.shape
    r = numerical_rank(W)
    if r == 0:
        return DecomposeReport(np.zeros((n, 0)), np.zeros((0, k)), 1.0, 1.0, 1.0, 0, True)
    flagged = r < k or n < k
    if flagged:
        Wr, V = column_reduction(W)
        F = wcb_rounding(Wr, 1)
        S = F.S @ V.T
    else:
        F = wcb_rounding(W, 1)
        S = F.S
    U = F.U
    L = F.flags["l2_lower"] * r ** -0.5
    D = float(col_pnorms(U, 1).max())
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_samples, k))
    x = np.vstack([x, np.eye(k)])
    num = np.abs(x @ W.T).sum(axis=1)
    den = np.abs(x @ S.T).sum(axis=1)
    live = den > 0
    ratios = num[live] / den[live]
    # center the observed ratios on 1; fall back to the certified midpoint
    g = math.sqrt(ratios.min() * ratios.max()) if ratios.size else math.sqrt(D * L)
    U, S, ratios = U / g, S * g, ratios / g
    D, L = D / g, L / g
    c = max(D, 1.0 / L)
    lo = float(ratios.min()) if ratios.size else 1.0
    hi = float(ratios.max()) if ratios.size else 1.0
    assert lo >= 1 / c * (1 - 1e-9) and hi <= c * (1 + 1e-9), "l1 decomposition bound violated"
    return DecomposeReport(U, S, c, lo, hi, r, flagged)


def _summarize(X: np.ndarray, k: int, mode: str, seed: int, caps, flags: dict):
    """Inner solve then push ``S @ right`` (at most k x d) upward."""
    res = l1_rank_k_inner(X, k, mode, seed, caps)
    rep = l1_decompose_wcb(res.left, seed=seed)
    if rep.flagged:
        flags["rank_collapse"] = flags.get("rank_collapse", 0) + 1
    out = rep.S @ res.right
    if out.shape[0] < k:
        out = np.vstack([out, np.zeros((k - out.shape[0], X.shape[1]))])
    flags["blowup"] = max(flags.get("blowup", 1.0), rep.c)
    return out


def l1_lowrank_tree(stream, k: int, cfg: TreeConfig, mode: str = "enumerated", seed: int = 0,
                    caps: dict | None = None, data=None) -> LowRankResult:
    """Merge-and-reduce rank-``k`` l1 approximation, then a second pass for the left factor.

    Leaves of ``block_rows`` rows are summarized by ``k x d`` matrices
    ``S @ right``. Summaries concatenate until another would overflow
    ``block_rows``, then the merged matrix is summarized again. The final
    ``k`` directions ``P`` give the left factor by exact per-row l1 fits over a
    second pass of the data (``data`` or the replayed ``stream``).
    """
    if isinstance(stream, np.ndarray):
        stream = block_iter(as_matrix(stream), 1)
    if not isinstance(stream, RowBlockStream) or not isinstance(stream.source, np.ndarray):
        raise ValueError("l1_lowrank_tree needs a replayable array-backed stream")
    A = stream.source
    n, d = A.shape
    b = cfg.resolve(n, d) if cfg.block_rows is None else int(cfg.block_rows)
    b = max(b, 2 * k)
    flags: dict = {"levels": 0}
    levels: list[list[np.ndarray]] = []
    high = 0
    trace = []

    def push(level: int, M: np.ndarray):
        nonlocal high
        while len(levels) <= level:
            levels.append([])
        levels[level].append(M)
        held = sum(m.shape[0] for lvl in levels for m in lvl)
        high = max(high, held * d)
        if sum(m.shape[0] for m in levels[level]) + k > b:
            merged = np.vstack(levels[level])
            levels[level] = []
            trace.append({"level": level + 1, "input_rows": int(merged.shape[0]), "output_rows": k})
            flags["levels"] = max(flags["levels"], level + 2)
            push(level + 1, _summarize(merged, k, mode, seed, caps, flags))

    for blk in block_iter(A, b):
        high = max(high, blk.shape[0] * d + sum(m.shape[0] for lvl in levels for m in lvl) * d)
        trace.append({"level": 0, "input_rows": int(blk.shape[0]), "output_rows": k})
        flags["levels"] = max(flags["levels"], 1)
        push(0, _summarize(blk, k, mode, seed, caps, flags))
    parts = [m for lvl in levels for m in lvl]
    T = np.vstack(parts) if parts else np.zeros((0, d))
    while T.shape[0] > k:
        chunks = [T[i:i + b] for i in range(0, T.shape[0], b)]
        T = np.vstack([_summarize(c, k, mode, seed, caps, flags) for c in chunks])
        trace.append({"level": "root", "input_rows": int(sum(c.shape[0] for c in chunks)),
                      "output_rows": int(T.shape[0])})
    P = T if T.shape[0] == k else np.vstack([T, np.zeros((k - T.shape[0], d))])
    if numerical_rank(P) < k:
        flags["padded"] = True
    src = A if data is None else as_matrix(data, "data")
    Q = np.zeros((n, k))
    for start in range(0, n, b):
        rows = src[start:start + b]
        Q[start:start + b] = l1_fit(P.T, rows.T).T
    flags["high_water_numbers"] = high
    flags["block_rows"] = b
    flags["trace"] = trace
    return LowRankResult(Q, P, k, l1_error(src, Q, P), f"tree-{mode}", flags)
