"""Command-line entry point: ``lpstream <subcommand> [flags]``.

Exit codes: 0 on success, 2 for input or contract errors, 3 when a solver
does not converge.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .amm import amm_rowwise, amm_streaming_columns, write_triples
from .conditioning import METHODS, RankDeficiencyError, RoundingError
from .datasets import GENERATORS, gen_dataset
from .embedding import TreeConfig, subspace_embed
from .experiments import (EXPERIMENT_METHODS, ExperimentError, ExperimentSpec, median_error,
                          planted_retention, run_linf_experiment, write_report)
from .leverage import SummaryInvariantError, leverage_report, stream_high_leverage
from .lowrank import CapError, l1_lowrank_tree
from .matcore import InputError, as_pnorm, block_iter, load_matrix, save_csv
from .regression import (ConvergenceError, RegressionInstance, linf_additive_stream,
                         regress_via_embedding, solve_lp_regression)
from .simplex import LPError

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE = 0, 2, 3


def _load(args) -> np.ndarray:
    if not args.input:
        raise InputError("--input is required")
    M = load_matrix(args.input, args.format, args.header)
    if M.size == 0:
        raise InputError(f"{args.input} holds no data")
    return M


def _split(M: np.ndarray):
    if M.shape[1] < 2:
        raise InputError("need at least one feature column plus the target column")
    return M[:, :-1], M[:, -1]


def _out_dir(args) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, payload: dict, name: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    out = _out_dir(args)
    if out is not None:
        (out / f"{name}.json").write_text(text + "\n")
    print(text)


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


# ------------------------------------------------------------------ commands


def cmd_gen(args) -> int:
    A, b, meta = gen_dataset(args.name, n=args.n, d=args.d, k=args.k, noise=args.noise,
                             scale=args.scale, seed=args.seed)
    out = _out_dir(args) or Path(".")
    save_csv(out / f"{args.name}.csv", np.hstack([A, b[:, None]]))
    (out / f"{args.name}.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"path": str(out / f"{args.name}.csv"), **meta}, sort_keys=True))
    return EXIT_OK


def cmd_leverage(args) -> int:
    A = _load(args)
    if args.budget or args.block:
        stream = block_iter(A, args.block or max(2 * A.shape[1], 64))
        st = stream_high_leverage(stream, args.p, args.tau, args.method, args.seed,
                                  budget=args.budget or None)
        payload = st.to_json()
    else:
        payload = leverage_report(A, args.p, args.tau, args.method, args.seed).to_json()
    _emit(args, payload, "leverage")
    return EXIT_OK


def cmd_embed(args) -> int:
    A = _load(args)
    cfg = TreeConfig(args.gamma, args.block, args.p, args.method, args.seed)
    emb = subspace_embed(A, cfg)
    out = _out_dir(args)
    if out is not None:
        save_csv(out / "embedding.csv", emb.T)
    _emit(args, {"levels_used": emb.levels_used, "block_rows": emb.block_rows,
                 "summary_rows": int(emb.T.shape[0]),
                 "certified_distortion": emb.certified_distortion,
                 "high_water_numbers": emb.high_water_numbers,
                 "trace": emb.trace_json()}, "embed")
    return EXIT_OK


def cmd_regress(args) -> int:
    A, b = _split(_load(args))
    inst = RegressionInstance(A, b, args.p)
    if args.stream:
        cfg = TreeConfig(args.gamma, args.block, args.p, args.method, args.seed)
        sol = regress_via_embedding(inst, cfg)
    else:
        sol = solve_lp_regression(inst)
    payload = sol.to_json()
    extra = {k: v for k, v in sol.extra.items() if k != "history"}
    payload.update(iterations=sol.iterations, converged=sol.converged, **extra)
    _emit(args, payload, "regress")
    if not sol.converged:
        print("error: solver did not converge", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_linf(args) -> int:
    A, b = _split(_load(args))
    Z = np.hstack([A, b[:, None]])
    stream = block_iter(Z, args.block or max(4 * Z.shape[1], 64))
    sol, st = linf_additive_stream(stream, args.p, args.eps, args.method, args.seed)
    x = sol.x
    payload = sol.to_json()
    payload.update(full_objective=float(np.max(np.abs(A @ x - b))), kept_rows=int(st.rows),
                   max_rows=int(st.max_rows))
    _emit(args, payload, "linf")
    return EXIT_OK


def cmd_lowrank(args) -> int:
    A = _load(args)
    cfg = TreeConfig(args.gamma, args.block, 1.0, "rounding", args.seed)
    res = l1_lowrank_tree(block_iter(A, 1), args.k, cfg, args.mode, args.seed)
    out = _out_dir(args)
    if out is not None:
        save_csv(out / "left.csv", res.left)
        save_csv(out / "right.csv", res.right)
    flags = {k: v for k, v in res.flags.items() if k != "trace"}
    _emit(args, {"k": res.k, "l1_error": res.l1_error, "inner_method": res.inner_method,
                 "input_l1_norm": float(np.abs(A).sum()), **flags}, "lowrank")
    return EXIT_OK


def cmd_amm(args) -> int:
    A = _load(args)
    B = load_matrix(args.second, args.format, args.header) if args.second else A
    out = _out_dir(args)
    if args.columns:
        if A.shape[0] != B.shape[0]:
            raise InputError("A and B need the same number of rows for A^T B")
        Ab, Bb, bound = amm_streaming_columns(A, B, args.eps)
        err = float(np.abs(A.T @ B - Ab.dense() @ Bb.dense().T).sum())
    else:
        Ab, Bb, bound = amm_rowwise(A, B, args.eps)
        err = float(np.abs(A @ B.T - Ab.dense() @ Bb.dense().T).sum())
    if out is not None:
        write_triples(out / "a_bar.csv", Ab)
        write_triples(out / "b_bar.csv", Bb)
    _emit(args, {"eps": args.eps, "mode": "columns" if args.columns else "rows",
                 "l1_error": err, "bound": bound,
                 "kept_a": int(Ab.nnz_per_row().sum()), "kept_b": int(Bb.nnz_per_row().sum())},
          "amm")
    return EXIT_OK


def cmd_experiment(args) -> int:
    params = {"n": args.n, "d": args.d}
    if args.dataset == "augmented-identity":
        params.update(k=args.k, scale=args.scale)
    if Path(args.dataset).exists():
        params = {"format": args.format, "header": args.header}
    methods = args.methods.split(",") if args.methods else [args.method]
    seeds = list(range(args.seed, args.seed + args.trials))
    spec = ExperimentSpec(args.dataset, methods[0], args.budget or 64, args.eps, args.p,
                          seeds, args.trials, params)
    budgets = _ints(args.budgets) if args.budgets else [spec.budget_m]
    rows = run_linf_experiment(spec, budgets, methods)
    summary = {m: {str(b): median_error(rows, m, b) for b in budgets} for m in methods}
    payload = {"median_error_ratio": summary, "rows": len(rows)}
    if args.planted:
        payload["planted_retention"] = {m: float(np.mean(planted_retention(m, trials=args.trials)))
                                        for m in methods}
    out = _out_dir(args)
    if out is not None:
        write_report(out, spec, rows, "linf", include_timing=not args.no_timing)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="input matrix; for regression the last column is the target")
    common.add_argument("--format", choices=["csv", "mm"], default="csv")
    common.add_argument("--header", action="store_true", help="skip the first CSV line")
    common.add_argument("--p", type=as_pnorm, default=as_pnorm(1), help="norm exponent or 'inf'")
    common.add_argument("--gamma", type=float, default=0.5)
    common.add_argument("--block", type=int, default=None, help="rows per block")
    common.add_argument("--budget", type=int, default=0)
    common.add_argument("--tau", type=float, default=0.1)
    common.add_argument("--eps", type=float, default=0.1)
    common.add_argument("--method", default="rounding")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--trials", type=int, default=1)
    common.add_argument("--out", default=None, help="output directory")

    ap = argparse.ArgumentParser(prog="lpstream", description="Streaming lp summaries")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="write a synthetic dataset")
    g.add_argument("--name", choices=GENERATORS, default="gaussian")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--d", type=int, default=8)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--noise", type=float, default=1.0)
    g.add_argument("--scale", type=float, default=10.0)
    g.set_defaults(func=cmd_gen)

    sub.add_parser("leverage", parents=[common], help="high-leverage rows").set_defaults(func=cmd_leverage)
    sub.add_parser("embed", parents=[common], help="merge-and-reduce embedding").set_defaults(func=cmd_embed)

    r = sub.add_parser("regress", parents=[common], help="lp regression")
    r.add_argument("--stream", action="store_true", help="solve on the streamed embedding")
    r.set_defaults(func=cmd_regress)

    sub.add_parser("linf", parents=[common], help="additive-error l_inf regression").set_defaults(func=cmd_linf)

    lr = sub.add_parser("lowrank", parents=[common], help="rank-k l1 approximation")
    lr.add_argument("--k", type=int, default=1)
    lr.add_argument("--mode", choices=["enumerated", "randomized"], default="randomized")
    lr.set_defaults(func=cmd_lowrank)

    am = sub.add_parser("amm", parents=[common], help="thresholded matrix product")
    am.add_argument("--second", default=None, help="second factor B (defaults to A)")
    am.add_argument("--columns", action="store_true", help="stream A^T B instead of A B^T")
    am.set_defaults(func=cmd_amm)

    ex = sub.add_parser("experiment", parents=[common], help="summary-based l_inf experiment")
    ex.add_argument("--dataset", default="census-like", help="generator name or matrix file")
    ex.add_argument("--methods", default=None, help=f"comma list from {','.join(EXPERIMENT_METHODS)}")
    ex.add_argument("--budgets", default=None, help="comma list of budgets m")
    ex.add_argument("--n", type=int, default=5000)
    ex.add_argument("--d", type=int, default=8)
    ex.add_argument("--k", type=int, default=2)
    ex.add_argument("--scale", type=float, default=10.0)
    ex.add_argument("--planted", action="store_true", help="also report planted-row retention")
    ex.add_argument("--no-timing", action="store_true", help="zero the timing columns")
    ex.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    if getattr(args, "method", None) and args.command not in {"experiment", "gen"} \
            and args.method not in METHODS:
        print(f"error: unknown method {args.method!r}; choose from {METHODS}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (ConvergenceError, RoundingError, LPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (InputError, RankDeficiencyError, ExperimentError, CapError, SummaryInvariantError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
