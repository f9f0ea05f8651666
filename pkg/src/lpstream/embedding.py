"""Merge-and-reduce lp subspace embeddings over a streaming (deep) or balanced tree."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conditioning import (
    WcbFactorization,
    column_reduction,
    lower_l2_constant,
    numerical_rank,
    upper_distortion,
    wcb,
)
from .matcore import PNorm, RowBlockStream, as_matrix, as_pnorm, block_iter


@dataclass
class TreeConfig:
    gamma: float = 0.5
    block_rows: int | None = None
    p: PNorm | float | str = 1.0
    wcb_method: str = "rounding"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        self.p = as_pnorm(self.p)
        if self.p.is_inf:
            raise ValueError("subspace embeddings need a finite p")

    def resolve(self, n: int, d: int) -> int:
        """Block size ``max(ceil(n^gamma), 2d)`` unless overridden."""
        if self.block_rows is not None:
            b = int(self.block_rows)
        else:
            b = max(int(math.ceil(max(n, 1) ** self.gamma)), 2 * d)
        if b < 2 * d:
            raise ValueError(f"block_rows = {b} must be at least 2d = {2 * d}")
        return b

    def level_bound(self) -> int:
        return int(math.ceil(1 / self.gamma)) + 1


@dataclass
class ReduceResult:
    S: np.ndarray
    distortion: float
    rank: int
    flagged: bool


@dataclass
class EmbeddingResult:
    T: np.ndarray
    levels_used: int
    per_level_distortion_bound: float
    total_lower_factor: float
    certified_distortion: float
    block_rows: int
    high_water_numbers: int = 0
    trace: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def trace_json(self) -> list:
        return [dict(node) for node in self.trace]


def _lower_pnorm_constant(F: WcbFactorization, p: float) -> float:
    """``L`` with ``||U y||_p >= L ||y||_p``, through the l2 lower constant of ``U``."""
    d = F.U.shape[1]
    c2 = F.flags.get("l2_lower")
    if c2 is None:
        c2 = lower_l2_constant(F.U, p)
    # ||y||_2 >= d^(1/2 - 1/p) ||y||_p for p <= 2 and ||y||_2 >= ||y||_p for p >= 2
    return c2 * min(1.0, d ** (0.5 - 1 / p))


def reduce_block(B, p, method: str = "rounding", seed: int = 0) -> ReduceResult:
    """Replace a block by the ``d x d`` factor ``S`` of a basis ``B = U S``.

    ``U`` is rescaled so that ``||U y||_p >= ||y||_p``, which makes
    ``||S x||_p <= ||B x||_p`` exact. The returned ``distortion`` is a
    Hoelder bound ``D`` with ``||B x||_p <= D ||S x||_p``.
    Rank-deficient blocks give zero-padded rows and ``flagged=True``.
    """
    B = as_matrix(B, "B")
    pn = as_pnorm(p)
    n, d = B.shape
    r = numerical_rank(B)
    if r == 0:
        return ReduceResult(np.zeros((d, d)), 1.0, 0, True)
    flagged = r < d or n < d
    if flagged:
        Br, V = column_reduction(B)
        F = wcb(Br, pn, method, seed)
        S_small = F.S @ V.T
    else:
        F = wcb(B, pn, method, seed)
        S_small = F.S
    L = _lower_pnorm_constant(F, pn.p)
    U = F.U / L
    S = S_small * L
    D = max(upper_distortion(U, pn), 1.0)
    if flagged:
        S = np.vstack([S, np.zeros((d - S.shape[0], d))])
    return ReduceResult(S, D, r, flagged)


class _Engine:
    """Eager merge-and-reduce over levels; level ``k`` holds summaries reduced ``k`` times."""

    def __init__(self, d: int, block_rows: int, p: PNorm, method: str, seed: int):
        self.d = d
        self.block_rows = block_rows
        self.p = p
        self.method = method
        self.seed = seed
        # per level: list of (rows, reductions, distortion)
        self.levels: list[list[tuple[np.ndarray, int, float]]] = []
        self.trace: list[dict] = []
        self.flags = {"rank_deficient_reduces": 0}
        self.high_water = 0
        self.raw_rows = 0

    def _held(self) -> int:
        return sum(m.shape[0] for lvl in self.levels for m, _, _ in lvl) + self.raw_rows

    def _note_memory(self, extra: int = 0) -> None:
        self.high_water = max(self.high_water, (self._held() + extra) * self.d)

    def reduce(self, M: np.ndarray, level: int, depth: int, dist: float):
        res = reduce_block(M, self.p, self.method, self.seed)
        self.flags["rank_deficient_reduces"] += int(res.flagged)
        total = dist * res.distortion
        self.trace.append({"level": level, "input_rows": int(M.shape[0]),
                           "output_rows": int(res.S.shape[0]),
                           "certified_distortion": float(res.distortion)})
        return res.S, depth + 1, total

    def push(self, level: int, M: np.ndarray, depth: int, dist: float) -> None:
        while len(self.levels) <= level:
            self.levels.append([])
        self.levels[level].append((M, depth, dist))
        self._note_memory()
        rows = sum(m.shape[0] for m, _, _ in self.levels[level])
        if rows + self.d > self.block_rows:
            parts = self.levels[level]
            self.levels[level] = []
            merged = np.vstack([m for m, _, _ in parts])
            S, dep, dd = self.reduce(merged, level + 1, max(q for _, q, _ in parts),
                                     max(x for _, _, x in parts))
            self.push(level + 1, S, dep, dd)

    def leaf(self, block: np.ndarray) -> None:
        if block.shape[0] < self.d:
            # too short to reduce: merge upward unreduced
            self.push(0, block, 0, 1.0)
            return
        S, dep, dd = self.reduce(block, 1, 0, 1.0)
        self.push(0, S, dep, dd)

    def finish(self):
        parts = [item for lvl in self.levels for item in lvl]
        if not parts:
            return np.zeros((0, self.d)), 0, 1.0
        T = np.vstack([m for m, _, _ in parts])
        depth = max(q for _, q, _ in parts)
        dist = max(x for _, _, x in parts)
        level = len(self.levels)
        while T.shape[0] > self.block_rows:
            pieces = []
            for start in range(0, T.shape[0], self.block_rows):
                chunk = T[start:start + self.block_rows]
                if chunk.shape[0] < self.d:
                    pieces.append((chunk, depth, dist))
                    continue
                S, dep, dd = self.reduce(chunk, level + 1, depth, dist)
                pieces.append((S, dep, dd))
            T = np.vstack([m for m, _, _ in pieces])
            depth = max(q for _, q, _ in pieces)
            dist = max(x for _, _, x in pieces)
            level += 1
        return T, depth, dist


def _result(T, depth, dist, d, block_rows, engine) -> EmbeddingResult:
    return EmbeddingResult(
        T=T,
        levels_used=depth,
        per_level_distortion_bound=float(d),
        total_lower_factor=float(d) ** (-depth),
        certified_distortion=float(dist),
        block_rows=block_rows,
        high_water_numbers=engine.high_water,
        trace=engine.trace,
        flags=engine.flags,
    )


def subspace_embed(stream, cfg: TreeConfig, n_hint: int | None = None) -> EmbeddingResult:
    """Streaming merge-and-reduce embedding ``T`` of the rows of ``stream``.

    Guarantee for all ``x``:
    ``||A x||_p / certified_distortion <= ||T x||_p <= ||A x||_p``.
    The nominal counterpart ``d^(-levels_used)`` is reported alongside.
    """
    if isinstance(stream, RowBlockStream) and isinstance(stream.source, np.ndarray):
        A = stream.source
    elif isinstance(stream, np.ndarray):
        A = as_matrix(stream, "A")
    else:
        A = None
    if A is not None:
        n, d = A.shape
        b = cfg.resolve(n, d)
        blocks = block_iter(A, b)
    else:
        if cfg.block_rows is None and n_hint is None:
            raise ValueError("a row-iterator stream needs cfg.block_rows or n_hint")
        it = iter(stream)
        first = next(it)
        d = first.shape[1]
        b = cfg.resolve(n_hint or 0, d)

        def regroup():
            yield first
            yield from it

        blocks = _rechunk(regroup(), b)
    eng = _Engine(d, b, cfg.p, cfg.wcb_method, cfg.seed)
    for blk in blocks:
        eng.raw_rows = blk.shape[0]
        eng._note_memory()
        eng.raw_rows = 0
        eng.leaf(blk)
    T, depth, dist = eng.finish()
    return _result(T, depth, dist, d, b, eng)


def _rechunk(blocks, b):
    buf, n = [], 0
    for blk in blocks:
        for start in range(0, blk.shape[0], b):
            part = blk[start:start + b]
            buf.append(part)
            n += part.shape[0]
            while n >= b:
                M = np.vstack(buf)
                yield M[:b]
                rest = M[b:]
                buf, n = ([rest] if rest.shape[0] else []), rest.shape[0]
    if n:
        yield np.vstack(buf)


def tree_simulate(A, cfg: TreeConfig, fanout: int = 0) -> EmbeddingResult:
    """Balanced merge-and-reduce tree; ``fanout = 0`` runs the streaming engine instead.

    Children of a node are concatenated in left-to-right leaf order. The
    effective fanout is ``min(fanout, block_rows // d)`` so that a merged node
    never exceeds ``block_rows`` rows. The root is left unreduced when its
    merged children already fit in one block.
    """
    A = as_matrix(A, "A")
    if fanout == 0:
        return subspace_embed(A, cfg)
    if fanout < 2:
        raise ValueError("fanout must be 0 (deep tree) or >= 2")
    n, d = A.shape
    b = cfg.resolve(n, d)
    eng = _Engine(d, b, cfg.p, cfg.wcb_method, cfg.seed)
    f = max(2, min(fanout, b // d))
    nodes: list[tuple[np.ndarray, int, float]] = []
    for blk in block_iter(A, b):
        if blk.shape[0] < d:
            nodes.append((blk, 0, 1.0))
        else:
            nodes.append(eng.reduce(blk, 1, 0, 1.0))
    level = 1
    eng.high_water = max(eng.high_water, b * d)
    while len(nodes) > 1:
        groups = [nodes[i:i + f] for i in range(0, len(nodes), f)]
        nxt = []
        for g in groups:
            merged = np.vstack([m for m, _, _ in g])
            depth = max(q for _, q, _ in g)
            dist = max(x for _, _, x in g)
            eng.high_water = max(eng.high_water, merged.shape[0] * d)
            if len(groups) == 1 and merged.shape[0] <= b:
                nxt.append((merged, depth, dist))
            else:
                nxt.append(eng.reduce(merged, level + 1, depth, dist))
        nodes = nxt
        level += 1
        if len(nodes) == 1:
            break
    if not nodes:
        return _result(np.zeros((0, d)), 0, 1.0, d, b, eng)
    T, depth, dist = nodes[0]
    while T.shape[0] > b:
        T, depth, dist = eng.reduce(T, level + 1, depth, dist)
        level += 1
    return _result(T, depth, dist, d, b, eng)
