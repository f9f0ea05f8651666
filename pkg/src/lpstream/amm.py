"""Thresholded approximate matrix multiplication with entrywise l1 guarantees."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .matcore import RowBlockStream, as_matrix, block_iter


@dataclass
class ThresholdedVector:
    """Sparse vector holding the entries above ``(eps/2) * norm1_reference``."""

    indices: np.ndarray
    values: np.ndarray
    length: int
    eps: float
    norm1_reference: float

    @property
    def kept(self) -> list[tuple[int, float]]:
        return [(int(i), float(v)) for i, v in zip(self.indices, self.values)]

    def dense(self) -> np.ndarray:
        out = np.zeros(self.length)
        out[self.indices] = self.values
        return out


def _check_eps(eps: float) -> None:
    if not 0 < eps < 2:
        raise ValueError(f"eps must lie in (0, 2), got {eps}")


def threshold_vector(x, eps: float, ref_norm: float | None = None) -> ThresholdedVector:
    """Keep ``x_i`` only when ``|x_i| > (eps/2) * ref_norm`` (``ref_norm`` defaults to ``||x||_1``)."""
    _check_eps(eps)
    x = np.asarray(x, dtype=np.float64).ravel()
    ref = float(np.abs(x).sum()) if ref_norm is None else float(ref_norm)
    idx = np.flatnonzero(np.abs(x) > eps / 2 * ref)
    return ThresholdedVector(idx, x[idx], x.size, eps, ref)


def sketch_inner_product(x, y, eps: float) -> float:
    """``<x_bar, y_bar>`` for thresholded ``x`` and ``y``.

    The error is at most ``eps * ||x||_1 * ||y||_1`` for any signs. For
    nonnegative inputs the estimate never exceeds ``<x, y>``.
    """
    tx = threshold_vector(x, eps)
    ty = threshold_vector(y, eps)
    common, ix, iy = np.intersect1d(tx.indices, ty.indices, assume_unique=True, return_indices=True)
    return float(np.dot(tx.values[ix], ty.values[iy]))


@dataclass
class SparseRows:
    """Row-major sparse matrix: for each row, its kept column indices and values."""

    shape: tuple[int, int]
    indices: list[np.ndarray]
    values: list[np.ndarray]

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for r, (idx, val) in enumerate(zip(self.indices, self.values)):
            out[r, idx] = val
        return out

    def nnz_per_row(self) -> np.ndarray:
        return np.array([len(i) for i in self.indices], dtype=np.int64)

    def triples(self):
        for r, (idx, val) in enumerate(zip(self.indices, self.values)):
            for c, v in zip(idx, val):
                yield r, int(c), float(v)

    def transpose_dense(self) -> np.ndarray:
        return self.dense().T


def _threshold_rows(M: np.ndarray, eps: float, ref: np.ndarray | None = None) -> SparseRows:
    if ref is None:
        ref = np.abs(M).sum(axis=1)
    keep = np.abs(M) > (eps / 2) * ref[:, None]
    idx = [np.flatnonzero(row) for row in keep]
    val = [M[r, i] for r, i in enumerate(idx)]
    return SparseRows(M.shape, idx, val)


def amm_rowwise(A, B, eps: float):
    """Threshold every row of ``A`` and ``B`` by its own l1 norm.

    Returns ``(A_bar, B_bar, bound)`` with sparse factors and
    ``bound = eps * ||A||_1 * ||B||_1`` on ``||A B^T - A_bar B_bar^T||_1``.
    """
    _check_eps(eps)
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[1]:
        raise ValueError("A and B need the same number of columns")
    Ab = _threshold_rows(A, eps)
    Bb = _threshold_rows(B, eps)
    bound = eps * float(np.abs(A).sum()) * float(np.abs(B).sum())
    return Ab, Bb, bound


class ColumnThresholder:
    """One-pass column thresholding with running column l1 norms.

    An entry is admitted when it beats the running threshold of its column.
    Running norms only grow, so every entry that would survive the final
    threshold is admitted when it arrives. ``finish`` re-prunes against the
    final norms, which leaves exactly the offline kept set.
    """

    def __init__(self, eps: float):
        _check_eps(eps)
        self.eps = eps
        self.norms: np.ndarray | None = None
        self.rows = 0
        self.kept: list[list[tuple[int, float]]] = []
        self.max_held = 0

    def update(self, block: np.ndarray) -> None:
        block = np.asarray(block, dtype=np.float64)
        if self.norms is None:
            self.norms = np.zeros(block.shape[1])
            self.kept = [[] for _ in range(block.shape[1])]
        for row in block:
            self.norms += np.abs(row)
            cols = np.flatnonzero(np.abs(row) > (self.eps / 2) * self.norms)
            for c in cols:
                self.kept[c].append((self.rows, float(row[c])))
            self.rows += 1
            self._prune()

    def _prune(self) -> None:
        held = 0
        for c, entries in enumerate(self.kept):
            thr = (self.eps / 2) * self.norms[c]
            if len(entries) > 2 / self.eps:
                entries[:] = [(r, v) for r, v in entries if abs(v) > thr]
            held += len(entries)
        self.max_held = max(self.max_held, held)

    def finish(self) -> SparseRows:
        """Columns of the thresholded matrix as a :class:`SparseRows` over columns."""
        if self.norms is None:
            return SparseRows((0, self.rows), [], [])
        idx, val = [], []
        for c, entries in enumerate(self.kept):
            thr = (self.eps / 2) * self.norms[c]
            keep = [(r, v) for r, v in entries if abs(v) > thr]
            idx.append(np.array([r for r, _ in keep], dtype=np.int64))
            val.append(np.array([v for _, v in keep]))
        return SparseRows((len(self.kept), self.rows), idx, val)


def amm_streaming_columns(streamA, streamB, eps: float, block_size: int = 64):
    """One-pass column thresholding of ``A`` and ``B`` for ``A^T B``.

    Returns ``(A_bar_cols, B_bar_cols, bound)``. Each factor is a
    :class:`SparseRows` whose rows are the columns of the thresholded matrix.
    """
    outs = []
    fro = []
    for s in (streamA, streamB):
        if not isinstance(s, RowBlockStream):
            s = block_iter(s, block_size)
        ct = ColumnThresholder(eps)
        total = 0.0
        for blk in s:
            ct.update(blk)
            total += float(np.abs(blk).sum())
        outs.append(ct.finish())
        fro.append(total)
    return outs[0], outs[1], eps * fro[0] * fro[1]


def offline_column_kept(M, eps: float) -> list[np.ndarray]:
    """Row indices kept per column when thresholding with the full column norms."""
    M = as_matrix(M, "M")
    return [threshold_vector(M[:, c], eps).indices for c in range(M.shape[1])]


def write_triples(path, sparse: SparseRows) -> None:
    with open(Path(path), "w") as fh:
        fh.write("i,j,value\n")
        for r, c, v in sparse.triples():
            fh.write(f"{r},{c},{v:.17g}\n")
