"""Acceptance suite: one block of checks per criterion, summarized as PASS/FAIL lines.

Run standalone with ``python3 tests/test_acceptance.py``. Sub-checks that are
known to be unattainable with a faithful implementation are marked
``xfail(strict=True)``: they run in full, are reported as FAIL in the summary,
and turn the run red if they ever start passing.
"""

import itertools
import math
import sys
import time

import numpy as np
import pytest

from lpstream import embedding as embedding_mod
from lpstream.amm import (ColumnThresholder, amm_rowwise, amm_streaming_columns,
                          offline_column_kept, sketch_inner_product)
from lpstream.conditioning import wcb, wcb_check, wcb_orth, wcb_rounding, wcb_spc3
from lpstream.embedding import TreeConfig, subspace_embed
from lpstream.experiments import ExperimentSpec, median_error, planted_retention, run_linf_experiment
from lpstream.leverage import leverage_scores, local_global_gap, stream_high_leverage
from lpstream.lowrank import l1_error, l1_fit, l1_lowrank_tree, l1_rank_k_inner
from lpstream.matcore import block_iter, row_pnorms, vector_pnorm
from lpstream.regression import (RegressionInstance, linf_additive_stream, linf_regression,
                                 linf_space_cap, regress_via_embedding, solve_lp_regression)

SPC3_NOTE = ("literal sparse-Cauchy basis with nominal (d^2.5, 1) certificate: "
             "sampled beta test passes in roughly 30% of trials")


# ----------------------------------------------------------------- criterion 1


def test_c1_orth_certificates(acceptance):
    rng = np.random.default_rng(100)
    worst_fro, fails = 0.0, 0
    for t in range(100):
        d = int(rng.integers(1, 9))
        n = int(rng.integers(d, 501))
        A = rng.standard_normal((n, d)) * rng.uniform(0.1, 10, d)
        F = wcb_orth(A)
        worst_fro = max(worst_fro, abs(np.linalg.norm(F.U) - math.sqrt(d)))
        ok = F.cert.alpha == pytest.approx(math.sqrt(d)) and F.cert.beta == 1.0
        fails += not (ok and wcb_check(F, seed=t).passed)
    ok = acceptance.record(1, "orth", fails == 0 and worst_fro <= 1e-9,
                           f"{fails} check failures, max |‖U‖_F - √d| = {worst_fro:.1e}")
    assert ok


def test_c1_rounding_certificates(acceptance):
    rng = np.random.default_rng(101)
    fails, count = 0, 0
    t0 = time.perf_counter()
    for p in (1, 1.5, 3):
        for t in range(30):
            d = int(rng.integers(1, 9))
            n = int(rng.integers(2 * d, 501))
            A = rng.standard_normal((n, d)) * rng.uniform(0.1, 10, d)
            F = wcb_rounding(A, p)
            # the audited certificate is exact, so the 2x safety margin is not used up
            res = wcb_check(F, seed=t)
            fails += not (res.passed and res.worst_alpha_ratio <= 2 and res.worst_beta_ratio <= 2)
            count += 1
    ok = acceptance.record(1, "rounding", fails == 0,
                           f"{count - fails}/{count} pass, {time.perf_counter() - t0:.1f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason=SPC3_NOTE)
def test_c1_spc3_pass_rate(acceptance):
    rng = np.random.default_rng(102)
    passed = 0
    for s in range(1000):
        d = int(rng.integers(2, 9))
        n = int(rng.integers(10 * d, 501))
        passed += wcb_check(wcb_spc3(rng.standard_normal((n, d)), seed=s)).passed
    rate = passed / 1000
    ok = acceptance.record(1, "spc3 >= 95%", rate >= 0.95, f"pass rate {rate:.3f}")
    assert ok


# ----------------------------------------------------------------- criterion 2


@pytest.mark.parametrize("p", [1, 2, 3])
def test_c2_leverage_facts(acceptance, p):
    rng = np.random.default_rng(200 + p)
    card_viol = point_viol = 0
    for _ in range(50):
        d = int(rng.integers(2, 7))
        n = int(rng.integers(5 * d, 300))
        A = rng.standard_normal((n, d)) * rng.uniform(0.05, 20, (n, 1))
        F = wcb(A, p, "rounding")
        w = leverage_scores(F)
        total = w.sum()
        alpha_p, beta_p = F.cert.alpha**p, F.cert.beta**p
        card_viol += total > alpha_p + 1e-6
        for tau in (0.01, 0.1, 0.5):
            card_viol += np.sum(w > tau * total) > alpha_p / (tau * total) + 1e-6
        Z = rng.standard_normal((200, d))
        Y = Z @ F.U.T
        Y /= row_pnorms(Y, p)[:, None]
        # |(U z)_i|^p <= beta^p w_i ||U z||_p^p with ||U z||_p = 1
        point_viol += int(np.sum(np.abs(Y) ** p > beta_p * w[None, :] + 1e-6))
    ok = acceptance.record(2, f"p={p}", card_viol == 0 and point_viol == 0,
                           f"{card_viol} cardinality, {point_viol} pointwise violations")
    assert ok


# ----------------------------------------------------------------- criterion 3


@pytest.mark.parametrize("p", [1, 1.5, 3])
def test_c3_local_global(acceptance, p):
    rng = np.random.default_rng(300 + int(10 * p))
    viol = rows = 0
    for _ in range(100):
        d = int(rng.integers(2, 6))
        n = int(rng.integers(6 * d, 200))
        A = rng.standard_normal((n, d)) * rng.uniform(0.2, 5, (n, 1))
        size = int(rng.integers(2 * d, n // 2 + 1))
        start = int(rng.integers(0, n - size + 1))
        w, wh, cg, cl = local_global_gap(A, np.arange(start, start + size), p)
        adjust = d * cg.alpha**p * max(cl.beta, cl.beta**p)
        viol += int(np.sum(wh < w / adjust - 1e-12))
        rows += size
    ok = acceptance.record(3, f"p={p}", viol == 0, f"{viol} violations over {rows} rows")
    assert ok


# ----------------------------------------------------------------- criterion 4


def test_c4_superset(acceptance):
    rng = np.random.default_rng(400)
    misses = over_cap = 0
    tau = 0.05
    for inst in range(20):
        n, d = int(rng.integers(200, 2001)), int(rng.integers(2, 7))
        A = rng.standard_normal((n, d)) * rng.uniform(0.2, 3, (n, 1))
        A[rng.integers(0, n)] *= 40
        p = (1.0, 2.0, 3.0)[inst % 3]
        method = "orth" if p == 2 else "rounding"
        offline = np.flatnonzero(leverage_scores(wcb(A, p, method)) > tau)
        for _ in range(20):
            perm = rng.permutation(n)
            st = stream_high_leverage(block_iter(A[perm], max(8 * d, 100)), p, tau, method)
            misses += len(set(offline.tolist()) - set(perm[st.origin].tolist()))
            over_cap += st.max_rows > st.cap * (1 + 1e-9)
    ok = acceptance.record(4, "superset", misses == 0 and over_cap == 0,
                           f"{misses} misses, {over_cap} cap overruns over 400 streams")
    assert ok


# ----------------------------------------------------------------- criterion 5


@pytest.mark.parametrize("n", [256, 512, 1024])
def test_c5_sandwich(acceptance, monkeypatch, n):
    seen = []
    real = embedding_mod.reduce_block

    def spy(B, p, method="rounding", seed=0):
        res = real(B, p, method, seed)
        seen.append((np.array(B), res))
        return res

    monkeypatch.setattr(embedding_mod, "reduce_block", spy)
    rng = np.random.default_rng(500 + n)
    level_viol = end_viol = reduces = 0
    for gamma, p in itertools.product((0.4, 0.5), (1, 3)):
        A = rng.standard_normal((n, 3)) * rng.uniform(0.2, 5, (n, 1))
        seen.clear()
        emb = subspace_embed(A, TreeConfig(gamma, p=p))
        for B, res in seen:
            X = np.vstack([rng.standard_normal((1000, 3)), np.eye(3)])
            bx, sx = row_pnorms(X @ B.T, p), row_pnorms(X @ res.S.T, p)
            level_viol += int(np.sum(sx > bx * (1 + 1e-8)) + np.sum(sx * res.distortion < bx * (1 - 1e-9)))
        reduces += len(seen)
        X = np.vstack([rng.standard_normal((1000, 3)), np.eye(3)])
        ax, tx = row_pnorms(X @ A.T, p), row_pnorms(X @ emb.T.T, p)
        end_viol += int(np.sum(tx > ax * (1 + 1e-8)) + np.sum(tx * emb.certified_distortion < ax * (1 - 1e-9)))
    ok = acceptance.record(5, f"n={n}", level_viol == 0 and end_viol == 0,
                           f"{reduces} reduces, {level_viol} level and {end_viol} end-to-end violations")
    assert ok


# ----------------------------------------------------------------- criterion 6


@pytest.mark.parametrize("p", [1, 1.5, 3])
def test_c6_regression_ratio(acceptance, p):
    rng = np.random.default_rng(600 + int(10 * p))
    viol, worst = 0, 0.0
    for _ in range(20):
        A = rng.standard_normal((256, 3)) * rng.uniform(0.5, 2, (256, 1))
        b = A @ rng.standard_normal(3) + rng.standard_t(3, 256)
        inst = RegressionInstance(A, b, p)
        sol = regress_via_embedding(inst, TreeConfig(0.5, p=p))
        opt = solve_lp_regression(inst).objective
        worst = max(worst, sol.objective / opt)
        viol += sol.objective > sol.certified_gap * opt * (1 + 1e-9)
    cons = 0
    for _ in range(5):
        A = rng.standard_normal((200, 3))
        b = A @ rng.standard_normal(3)
        sol = regress_via_embedding(RegressionInstance(A, b, p), TreeConfig(0.5, p=p))
        cons += vector_pnorm(A @ sol.x - b, p) > 1e-6 * vector_pnorm(b, p)
    ok = acceptance.record(6, f"p={p}", viol == 0 and cons == 0,
                           f"{viol} ratio and {cons} consistency violations, worst ratio {worst:.3f}")
    assert ok


# ----------------------------------------------------------------- criterion 7


def _chebyshev_oracle(A, b):
    """Minimax fit by enumerating every (d+1)-row equioscillation system."""
    n, d = A.shape
    best = math.inf
    signs = np.array([(1.0,) + s for s in itertools.product([-1.0, 1.0], repeat=d)])
    subsets = np.array(list(itertools.combinations(range(n), d + 1)))
    for chunk in np.array_split(subsets, max(1, len(subsets) // 4000)):
        M = np.concatenate([np.repeat(A[chunk][:, None], len(signs), 1),
                            -np.broadcast_to(signs[None, :, :, None],
                                             (len(chunk), len(signs), d + 1, 1))], axis=3)
        rhs = np.repeat(b[chunk][:, None], len(signs), 1)
        M, rhs = M.reshape(-1, d + 1, d + 1), rhs.reshape(-1, d + 1)
        good = np.abs(np.linalg.det(M)) > 1e-12
        # the first sign is fixed, so the level may come out negative
        sol = np.linalg.solve(M[good], rhs[good][..., None])[..., 0]
        if len(sol):
            best = min(best, float(np.abs(sol[:, :d] @ A.T - b).max(axis=1).min()))
    return best


def test_c7_additive_linf(acceptance):
    rng = np.random.default_rng(700)
    viol = cap_viol = 0
    for inst in range(20):
        n, d = 300, int(rng.integers(2, 5))
        A = rng.standard_normal((n, d))
        b = A @ rng.standard_normal(d) + rng.standard_t(2, n)
        Z = np.hstack([A, b[:, None]])
        x_star, _ = linf_regression(A, b)
        f_star = float(np.max(np.abs(A @ x_star - b)))
        for eps, p in itertools.product((0.05, 0.1, 0.3), (1, 2, 4)):
            sol, st = linf_additive_stream(block_iter(Z, 60), p, eps)
            f_hat = float(np.max(np.abs(A @ sol.x - b)))
            viol += f_hat - f_star > eps * vector_pnorm(b, p) + 1e-9
            alpha = max(c.alpha for c in st.certs)
            beta = max(c.beta for c in st.certs)
            cap_viol += st.max_rows > linf_space_cap(alpha, beta, p, d, eps)
    ok = acceptance.record(7, "additive bound", viol == 0 and cap_viol == 0,
                           f"{viol} bound and {cap_viol} space violations over 180 runs")
    assert ok


def test_c7_exact_solver_vs_enumeration(acceptance):
    rng = np.random.default_rng(701)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        n = int(rng.integers(d + 2, 41))
        A, b = rng.standard_normal((n, d)), rng.standard_normal(n)
        x, _ = linf_regression(A, b)
        worst = max(worst, abs(float(np.max(np.abs(A @ x - b))) - _chebyshev_oracle(A, b)))
    ok = acceptance.record(7, "exact solver", worst <= 1e-8, f"max gap {worst:.1e} over 50")
    assert ok


# ----------------------------------------------------------------- criterion 8


def test_c8_amm(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(800)
    sand = two = 0
    for _ in range(10_000):
        x, y = rng.random(10), rng.random(10)
        x, y = x / x.sum(), y / y.sum()
        est = sketch_inner_product(x, y, 0.1)
        sand += not (x @ y - 0.1 - 1e-12 <= est <= x @ y + 1e-12)
    for _ in range(10_000):
        x, y = rng.standard_normal(10), rng.standard_normal(10)
        bound = 0.1 * np.abs(x).sum() * np.abs(y).sum()
        two += abs(sketch_inner_product(x, y, 0.1) - x @ y) > bound + 1e-12
    prod = mismatch = 0
    for _ in range(100):
        n, k = int(rng.integers(5, 40)), int(rng.integers(2, 10))
        A, B = rng.standard_normal((n, k)), rng.standard_normal((n, k))
        for eps in (0.05, 0.1, 0.2, 0.3, 0.5):
            Ab, Bb, bound = amm_rowwise(A, B, eps)
            prod += np.abs(A @ B.T - Ab.dense() @ Bb.dense().T).sum() > bound * (1 + 1e-12)
            Ac, Bc, bound_c = amm_streaming_columns(block_iter(A, 7), block_iter(B, 7), eps)
            prod += np.abs(A.T @ B - Ac.dense() @ Bc.dense().T).sum() > bound_c * (1 + 1e-12)
        ct = ColumnThresholder(0.2)
        for blk in block_iter(A, 5):
            ct.update(blk)
        got = ct.finish()
        mismatch += any(not np.array_equal(g, o)
                        for g, o in zip(got.indices, offline_column_kept(A, 0.2)))
    elapsed = time.perf_counter() - t0
    ok = acceptance.record(8, "amm", sand + two + prod + mismatch == 0 and elapsed < 60,
                           f"{sand}/{two}/{prod}/{mismatch} violations, {elapsed:.1f}s")
    assert ok


# ----------------------------------------------------------------- criterion 9


def _rank1_oracle(X, restarts=20, rounds=50, seed=0):
    rng = np.random.default_rng(seed)
    best = np.abs(X).sum()
    for r in range(restarts):
        v = X[r] if r < X.shape[0] // 2 else rng.standard_normal(X.shape[1])
        for _ in range(rounds):
            u = l1_fit(v[:, None], X.T)[0]
            v = l1_fit(u[:, None], X)[0]
        best = min(best, l1_error(X, u[:, None], v[None, :]))
    return best


def test_c9_lowrank(acceptance):
    rng = np.random.default_rng(900)
    exact_bad = 0
    for k in (1, 2):
        for _ in range(3):
            A = rng.standard_normal((96, k)) @ rng.standard_normal((k, 6))
            res = l1_lowrank_tree(block_iter(A, 1), k, TreeConfig(0.5))
            exact_bad += res.l1_error > 1e-5 * np.abs(A).sum()
    ratios = []
    for _ in range(5):
        A = np.outer(rng.standard_normal(64), rng.standard_normal(6))
        A.flat[rng.choice(A.size, 6, replace=False)] += 20 * rng.standard_normal(6)
        res = l1_lowrank_tree(block_iter(A, 1), 1, TreeConfig(0.5), "randomized")
        ratios.append(res.l1_error / _rank1_oracle(A))
    X = rng.standard_normal((12, 5))
    r1, r2 = l1_rank_k_inner(X, 2), l1_rank_k_inner(X, 2)
    det = np.array_equal(r1.left, r2.left) and np.array_equal(r1.right, r2.right)
    ok = acceptance.record(9, "lowrank", exact_bad == 0 and max(ratios) <= 50 and det,
                           f"{exact_bad} exact-rank failures, max C = {max(ratios):.2f}, "
                           f"deterministic = {det}")
    assert ok


# ---------------------------------------------------------------- criterion 10

BUDGETS = [8, 16, 64, 256, 1024]


@pytest.fixture(scope="module")
def census_rows():
    spec = ExperimentSpec("census-like", "orth", 64, seeds=list(range(20)), trials=20,
                          params={"n": 5000, "d": 8})
    return run_linf_experiment(spec, BUDGETS, ["orth", "spc3"])


@pytest.mark.parametrize("method", ["orth", "spc3"])
def test_c10_census_error_curve(acceptance, census_rows, method):
    med = [median_error(census_rows, method, m) for m in BUDGETS]
    mono = all(b <= a for a, b in zip(med, med[1:]))
    ok = acceptance.record(10, f"census {method}", mono and med[-1] <= 0.05,
                           "medians " + ", ".join(f"{v:.3g}" for v in med))
    assert ok


@pytest.mark.parametrize("method", ["orth", pytest.param("spc3", marks=pytest.mark.xfail(
    strict=True, reason="one trial loses a planted row to a heavy fixed Cauchy weight"))])
def test_c10_planted_retention(acceptance, method):
    kept = planted_retention(method, trials=20)
    ok = acceptance.record(10, f"planted {method}", all(kept), f"{sum(kept)}/20 trials")
    assert ok


def test_c10_identity_baseline_misses(acceptance):
    kept = planted_retention("identity", trials=20)
    misses = 20 - sum(kept)
    ok = acceptance.record(10, "identity misses", misses >= 10, f"misses in {misses}/20 trials")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
