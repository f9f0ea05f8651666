"""Dense matrix helpers, p-norms, row-block streams and file ingestion."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np


class InputError(ValueError):
    """Raised for malformed input data (parse errors, ragged rows, non-finite values)."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class PNorm:
    """A norm exponent ``p`` in ``[1, inf]`` together with its dual ``q``."""

    p: float
    q: float = field(init=False)

    def __post_init__(self):
        p = float(self.p)
        if math.isnan(p) or p < 1:
            raise ValueError(f"p must lie in [1, inf], got {self.p!r}")
        object.__setattr__(self, "p", p)
        if p == 1:
            q = math.inf
        elif math.isinf(p):
            q = 1.0
        else:
            q = p / (p - 1)
        object.__setattr__(self, "q", q)

    @property
    def is_inf(self) -> bool:
        return math.isinf(self.p)

    @classmethod
    def parse(cls, text: str | float | "PNorm") -> "PNorm":
        if isinstance(text, PNorm):
            return text
        if isinstance(text, str) and text.strip().lower() in {"inf", "infinity", "oo"}:
            return cls(math.inf)
        return cls(float(text))

    def __str__(self) -> str:
        return "inf" if self.is_inf else f"{self.p:g}"


def as_pnorm(p) -> PNorm:
    return PNorm.parse(p)


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a C-contiguous 2-D float64 array, rejecting NaN/Inf."""
    A = np.ascontiguousarray(np.asarray(M, dtype=np.float64))
    if A.ndim == 1:
        A = A.reshape(1, -1) if A.size else A.reshape(0, 0)
    if A.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InputError(f"{name} contains non-finite entries")
    return A


def vector_pnorm(v, p) -> float:
    """(sum |v_i|^p)^(1/p), or max |v_i| for p = inf."""
    p = as_pnorm(p).p
    a = np.abs(np.asarray(v, dtype=np.float64)).ravel()
    if a.size == 0:
        return 0.0
    if math.isinf(p):
        return float(a.max())
    if p == 1:
        return float(a.sum())
    if p == 2:
        return float(np.sqrt(np.dot(a, a)))
    # scale first so large p does not overflow
    top = a.max()
    if top == 0:
        return 0.0
    return float(top * np.sum((a / top) ** p) ** (1.0 / p))


def entrywise_pnorm(M, p) -> float:
    """Entrywise p-norm of a matrix (the vector p-norm of its flattened entries)."""
    return vector_pnorm(np.asarray(M, dtype=np.float64).ravel(), p)


def row_pnorms(M, p) -> np.ndarray:
    """p-norm of every row of ``M``."""
    p = as_pnorm(p).p
    A = np.abs(np.asarray(M, dtype=np.float64))
    if A.shape[1] == 0:
        return np.zeros(A.shape[0])
    if math.isinf(p):
        return A.max(axis=1)
    if p == 1:
        return A.sum(axis=1)
    if p == 2:
        return np.sqrt(np.einsum("ij,ij->i", A, A))
    top = A.max(axis=1)
    safe = np.where(top > 0, top, 1.0)
    return top * np.sum((A / safe[:, None]) ** p, axis=1) ** (1.0 / p)


def col_pnorms(M, p) -> np.ndarray:
    return row_pnorms(np.asarray(M).T, p)


@dataclass
class RowBlockStream:
    """Iterable over consecutive row blocks of at most ``block_size`` rows.

    ``source`` is either a 2-D array or any iterable of equal-length rows.
    Iterating twice over an array-backed stream replays it; an iterator-backed
    stream can be consumed once.
    """

    source: object
    block_size: int
    width: int | None = None

    def __post_init__(self):
        if int(self.block_size) < 1:
            raise ValueError("block_size must be >= 1")
        self.block_size = int(self.block_size)
        if isinstance(self.source, np.ndarray) and self.source.ndim == 2:
            self.source = as_matrix(self.source)
            self.width = self.source.shape[1]

    def __iter__(self) -> Iterator[np.ndarray]:
        src = self.source
        b = self.block_size
        if isinstance(src, np.ndarray):
            for start in range(0, src.shape[0], b):
                yield src[start:start + b]
            return
        buf: list[np.ndarray] = []
        for row in src:
            r = np.asarray(row, dtype=np.float64).ravel()
            if self.width is None:
                self.width = r.size
            elif r.size != self.width:
                raise InputError(f"row of width {r.size} in a stream of width {self.width}")
            if not np.all(np.isfinite(r)):
                raise InputError("stream row contains non-finite entries")
            buf.append(r)
            if len(buf) == b:
                yield np.vstack(buf)
                buf = []
        if buf:
            yield np.vstack(buf)


def block_iter(M, b: int) -> RowBlockStream:
    """Split a matrix (or row iterable) into blocks of ``b`` rows; the last may be short."""
    if isinstance(M, RowBlockStream):
        return RowBlockStream(M.source, b, M.width)
    if not isinstance(M, np.ndarray):
        try:
            M = np.asarray(M, dtype=np.float64) if isinstance(M, (list, tuple)) else M
        except ValueError:
            pass
    if isinstance(M, np.ndarray):
        M = as_matrix(M) if M.size else np.zeros((0, M.shape[1] if M.ndim == 2 else 0))
    return RowBlockStream(M, b)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _parse_float(tok: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise InputError(f"cannot parse {tok!r} as a number", line) from None
    if not math.isfinite(v):
        raise InputError(f"non-finite entry {tok!r}", line)
    return v


def _load_csv(path: Path, header: bool) -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            text = raw.strip()
            if not text:
                continue
            vals = [_parse_float(t.strip(), lineno) for t in text.split(",")]
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise InputError(f"expected {width} columns, found {len(vals)}", lineno)
            rows.append(vals)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def _load_mm(path: Path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].lower().startswith("%%matrixmarket"):
        raise InputError("missing %%MatrixMarket banner", 1)
    banner = lines[0].lower().split()
    if len(banner) < 5 or banner[1] != "matrix":
        raise InputError("malformed banner", 1)
    layout, field_, symmetry = banner[2], banner[3], banner[4]
    if field_ not in {"real", "integer", "double"}:
        raise InputError(f"unsupported field {field_!r}", 1)
    if symmetry != "general":
        raise InputError(f"unsupported symmetry {symmetry!r}", 1)
    body = [(i + 1, ln.strip()) for i, ln in enumerate(lines[1:], start=1)
            if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise InputError("missing size line", len(lines))
    size_line, size_text = body[0]
    parts = size_text.split()
    if layout == "coordinate":
        if len(parts) != 3:
            raise InputError("size line must be 'rows cols nnz'", size_line)
        n, d, nnz = (int(_parse_float(t, size_line)) for t in parts)
        out = np.zeros((n, d))
        entries = body[1:]
        if len(entries) != nnz:
            raise InputError(f"expected {nnz} entries, found {len(entries)}", size_line)
        for lineno, text in entries:
            toks = text.split()
            if len(toks) != 3:
                raise InputError("coordinate entry must be 'i j value'", lineno)
            i, j = int(_parse_float(toks[0], lineno)), int(_parse_float(toks[1], lineno))
            if not (1 <= i <= n and 1 <= j <= d):
                raise InputError(f"index ({i}, {j}) outside {n}x{d}", lineno)
            out[i - 1, j - 1] = _parse_float(toks[2], lineno)
        return out
    if layout == "array":
        if len(parts) != 2:
            raise InputError("size line must be 'rows cols'", size_line)
        n, d = (int(_parse_float(t, size_line)) for t in parts)
        entries = body[1:]
        if len(entries) != n * d:
            raise InputError(f"expected {n * d} entries, found {len(entries)}", size_line)
        vals = [_parse_float(t, ln) for ln, t in entries]
        # array layout is column-major
        return np.array(vals, dtype=np.float64).reshape(d, n).T.copy()
    raise InputError(f"unsupported layout {layout!r}", 1)


def load_matrix(path, format: str = "csv", header: bool = False) -> np.ndarray:
    """Read a dense matrix from CSV or Matrix Market (coordinate or array)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"no such file: {path}")
    fmt = format.lower()
    if fmt == "csv":
        return _load_csv(path, header)
    if fmt in {"mm", "matrix-market", "mtx"}:
        return _load_mm(path)
    raise ValueError(f"unknown format {format!r}")


def save_csv(path, M, header: Iterable[str] | None = None) -> None:
    """Write with 17 significant digits so that ``load_matrix`` round-trips exactly."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    with open(path, "w") as fh:
        if header is not None:
            fh.write(",".join(header) + "\n")
        for row in M:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
