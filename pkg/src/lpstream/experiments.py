"""Experiment drivers: summary-based l_inf regression and per-module property reports."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .amm import amm_rowwise, amm_streaming_columns
from .datasets import gen_dataset
from .embedding import TreeConfig, subspace_embed
from .leverage import prune_stream, stream_high_leverage, surrogate_scores, uniform_sample
from .lowrank import l1_lowrank_tree, l1_rank_k_inner
from .matcore import as_pnorm, block_iter, load_matrix, row_pnorms
from .regression import linf_regression, linf_rowspace

EXPERIMENT_METHODS = ("orth", "spc3", "rounding", "identity", "sample")
MAX_EXACT_CELLS = 2_000_000


class ExperimentError(ValueError):
    pass


@dataclass
class ExperimentSpec:
    dataset: str = "census-like"
    method: str = "orth"
    budget_m: int = 64
    eps: float = 0.1
    p: float | str = 2.0
    seeds: list = field(default_factory=lambda: [0])
    trials: int = 1
    params: dict = field(default_factory=dict)
    data_seed: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ExperimentError("trials must be >= 1")
        if self.method not in EXPERIMENT_METHODS:
            raise ExperimentError(f"unknown method {self.method!r}")

    def load(self):
        if Path(str(self.dataset)).exists():
            A = load_matrix(self.dataset, self.params.get("format", "csv"),
                            bool(self.params.get("header", False)))
            return A[:, :-1], A[:, -1], {"name": str(self.dataset)}
        return gen_dataset(self.dataset, seed=self.data_seed, **self.params)


@dataclass
class MetricRow:
    method: str
    budget_m: int
    seed: int
    error_ratio: float
    max_summary_rows: int
    update_time_s: float
    query_time_s: float
    total_time_s: float


NATIVE_P = {"orth": 2.0, "spc3": 1.0}


def summarize_rows(Z: np.ndarray, method: str, m: int, p: float, seed: int):
    """One streaming pass over the rows of ``Z`` with space budget ``m``.

    Returns ``(origin_indices, max_rows_after_prune)``.
    """
    if method == "sample":
        _, origin = uniform_sample(block_iter(Z, 256), m, seed)
        return origin, int(origin.size)
    if method == "identity":
        def select(X, o):
            sq = np.einsum("ij,ij->i", X, X)
            if not sq.any():
                return np.zeros(X.shape[0], dtype=bool)
            return surrogate_scores(X) > 2.0 / m

        _, origin, max_rows, _, _ = prune_stream(iter(block_iter(Z, 256)), select, Z.shape[1], m)
        return origin, max_rows
    st = stream_high_leverage(block_iter(Z, 256), NATIVE_P.get(method, p), 1.0, method, seed,
                              budget=m)
    return st.origin, st.max_rows


def run_linf_experiment(spec: ExperimentSpec, budgets=None, methods=None) -> list[MetricRow]:
    """Error ratio ``f_hat / f_star - 1`` of summary-based l_inf regression.

    For every method, budget and seed the rows of ``[A, b]`` are shuffled by
    the seed, streamed once into a summary, and the l_inf problem restricted to
    the kept rows is solved. ``f_hat`` is the full-data objective of that solution.
    """
    A, b, _ = spec.load()
    n, d = A.shape
    if n * (d + 1) > MAX_EXACT_CELLS:
        raise ExperimentError(f"exact baseline refused: {n} x {d + 1} exceeds {MAX_EXACT_CELLS} cells")
    budgets = [spec.budget_m] if budgets is None else list(budgets)
    methods = [spec.method] if methods is None else list(methods)
    for m in budgets:
        if m < d:
            raise ExperimentError(f"budget {m} is below d = {d}")
    x_star, _ = linf_regression(A, b)
    f_star = float(np.max(np.abs(A @ x_star - b)))
    p = as_pnorm(spec.p).p
    rows: list[MetricRow] = []
    seeds = list(spec.seeds)[: spec.trials] if len(spec.seeds) >= spec.trials else \
        list(spec.seeds) + list(range(max(spec.seeds, default=-1) + 1,
                                      max(spec.seeds, default=-1) + 1 + spec.trials - len(spec.seeds)))
    for method in methods:
        for m in budgets:
            for seed in seeds:
                perm = np.random.default_rng(seed).permutation(n)
                Z = np.hstack([A, b[:, None]])[perm]
                t0 = time.perf_counter()
                origin, max_rows = summarize_rows(Z, method, m, p, seed)
                t1 = time.perf_counter()
                keep = Z[origin]
                x_hat, _ = linf_rowspace(keep[:, :d], keep[:, d])
                t2 = time.perf_counter()
                f_hat = float(np.max(np.abs(A @ x_hat - b)))
                ratio = f_hat / f_star - 1 if f_star > 0 else (0.0 if f_hat == 0 else np.inf)
                assert f_hat >= f_star - 1e-9 * max(np.max(np.abs(b)), 1.0)
                rows.append(MetricRow(method, m, seed, float(ratio), int(max_rows),
                                      t1 - t0, t2 - t1, t2 - t0))
    rows.sort(key=lambda r: (r.method, r.budget_m, r.seed))
    return rows


def median_error(rows: list[MetricRow], method: str, m: int) -> float:
    return float(np.median([r.error_ratio for r in rows if r.method == method and r.budget_m == m]))


def planted_retention(method: str, trials: int = 20, n: int = 1000, d: int = 4, k: int = 2,
                      scale: float = 10.0, m: int = 256, seed0: int = 0) -> list[bool]:
    """For each trial, whether a summary of ``[A, b]`` kept every planted unit row."""
    out = []
    for t in range(trials):
        A, b, meta = gen_dataset("augmented-identity", n=n, d=d, k=k, scale=scale, seed=seed0 + t)
        Z = np.hstack([A, b[:, None]])
        origin, _ = summarize_rows(Z, method, m, 2.0, seed0 + t)
        out.append(set(meta["planted"]) <= set(int(i) for i in origin))
    return out


# --------------------------------------------------------------- other drivers


def run_embed_experiment(A: np.ndarray, cfg: TreeConfig, n_x: int = 1000, seed: int = 0) -> dict:
    emb = subspace_embed(A, cfg)
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.standard_normal((n_x, A.shape[1])), np.eye(A.shape[1])])
    p = cfg.p.p
    ratio = row_pnorms(X @ emb.T.T, p) / row_pnorms(X @ A.T, p)
    return {
        "levels_used": emb.levels_used,
        "summary_rows": int(emb.T.shape[0]),
        "block_rows": emb.block_rows,
        "certified_distortion": emb.certified_distortion,
        "nominal_distortion": 1 / emb.total_lower_factor,
        "min_ratio": float(ratio.min()),
        "max_ratio": float(ratio.max()),
        "sandwich_holds": bool(ratio.max() <= 1 + 1e-8 and
                               ratio.min() * emb.certified_distortion >= 1 - 1e-9),
        "trace": emb.trace_json(),
    }


def run_amm_experiment(A: np.ndarray, B: np.ndarray, eps_grid=(0.05, 0.1, 0.2, 0.3, 0.5)) -> list[dict]:
    out = []
    for eps in eps_grid:
        Ab, Bb, bound = amm_rowwise(A, B, eps)
        row_err = float(np.abs(A @ B.T - Ab.dense() @ Bb.dense().T).sum())
        Ac, Bc, bound_c = amm_streaming_columns(A, B, eps)
        col_err = float(np.abs(A.T @ B - Ac.dense() @ Bc.dense().T).sum())
        if row_err > bound * (1 + 1e-12) or col_err > bound_c * (1 + 1e-12):
            raise AssertionError(f"AMM bound violated at eps={eps}")
        out.append({"eps": eps, "rowwise_error": row_err, "columnwise_error": col_err,
                    "bound": bound, "max_row_nnz": int(max(Ab.nnz_per_row().max(initial=0),
                                                           Bb.nnz_per_row().max(initial=0)))})
    return out


def run_lowrank_experiment(A: np.ndarray, k: int, cfg: TreeConfig, mode: str = "enumerated",
                           seed: int = 0) -> dict:
    tree = l1_lowrank_tree(A, k, cfg, mode, seed)
    single = l1_rank_k_inner(A, k, "randomized" if A.shape[0] > 64 else mode, seed)
    return {"tree_l1_error": tree.l1_error, "inner_l1_error": single.l1_error,
            "ratio": tree.l1_error / single.l1_error if single.l1_error > 0 else
            (1.0 if tree.l1_error == 0 else float("inf")),
            "levels": tree.flags.get("levels"), "blowup": tree.flags.get("blowup")}


# ------------------------------------------------------------------- reports


def rows_to_csv(rows: list[MetricRow]) -> str:
    buf = io.StringIO()
    fields = list(MetricRow.__dataclass_fields__)
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in asdict(r).items()})
    return buf.getvalue()


def write_report(out_dir, spec: ExperimentSpec, rows: list[MetricRow], name: str = "linf",
                 include_timing: bool = True) -> tuple[Path, Path]:
    """Write ``<name>.csv`` and ``<name>.json``. Timing columns are zeroed when excluded."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not include_timing:
        rows = [MetricRow(r.method, r.budget_m, r.seed, r.error_ratio, r.max_summary_rows, 0.0, 0.0, 0.0)
                for r in rows]
    csv_path = out / f"{name}.csv"
    csv_path.write_text(rows_to_csv(rows))
    json_path = out / f"{name}.json"
    json_path.write_text(json.dumps({"spec": asdict(spec), "rows": len(rows),
                                     "csv": csv_path.name}, indent=2, sort_keys=True, default=str))
    return csv_path, json_path
