import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpstream.conditioning import (RankDeficiencyError, RoundingError, WcbCertificate,
                                   WcbFactorization, cauchy_variates, counter_hash, lewis_residual,
                                   lewis_weights, lewis_weights_full, spc3_rows, wcb, wcb_check,
                                   wcb_orth, wcb_rounding, wcb_spc3)
from lpstream.matcore import PNorm, col_pnorms, entrywise_pnorm, row_pnorms


def _factor_invariants(A, F):
    assert np.linalg.norm(A @ F.R - F.U) <= 1e-8 * np.linalg.norm(F.U)
    assert np.linalg.norm(F.U @ F.S - A) <= 1e-8 * np.linalg.norm(A)
    d = A.shape[1]
    assert np.linalg.norm(F.R @ F.S - np.eye(d)) <= 1e-8 * math.sqrt(d)


def test_orth_identity():
    F = wcb_orth(np.eye(3))
    np.testing.assert_allclose(np.abs(F.U), np.eye(3), atol=1e-15)
    assert F.cert.alpha == pytest.approx(math.sqrt(3))
    assert (F.cert.beta, F.cert.p.p, F.cert.method) == (1.0, 2.0, "orth")


def test_orth_diagonal():
    F = wcb_orth(np.diag([2.0, 5.0]))
    np.testing.assert_allclose(np.abs(F.R), np.diag([0.5, 0.2]), atol=1e-15)


def test_orth_random_against_svd():
    A = np.random.default_rng(0).standard_normal((200, 6))
    F = wcb_orth(A)
    assert np.linalg.norm(F.U) == pytest.approx(math.sqrt(6), abs=1e-9)
    sv = np.linalg.svd(F.U, compute_uv=False)
    assert sv.min() == pytest.approx(1, abs=1e-9)
    _factor_invariants(A, F)
    assert wcb_check(F).worst_beta_ratio <= 1 + 1e-9


def test_rank_deficiency_reports_rank():
    A = np.random.default_rng(1).standard_normal((20, 2)) @ np.ones((2, 3))
    with pytest.raises(RankDeficiencyError) as exc:
        wcb_orth(A)
    assert exc.value.rank == 1
    with pytest.raises(RankDeficiencyError):
        wcb_rounding(A, 1)


@pytest.mark.parametrize("p", [1, 1.5, 3])
def test_rounding_identity(p):
    F = wcb_rounding(np.eye(3), p)
    assert wcb_check(F).passed
    # identity rows: alpha equals the exact norm of the (rescaled) identity basis
    assert F.cert.alpha == pytest.approx(entrywise_pnorm(F.U, p))


def test_rounding_cauchy_rows():
    A = np.random.default_rng(2).standard_cauchy((100, 3))
    F = wcb_rounding(A, 1)
    res = wcb_check(F, n_samples=10_000)
    assert res.passed
    assert F.cert.alpha <= 2 * 3**1.5
    assert F.cert.beta <= 2


@pytest.mark.parametrize("p", [1, 1.5, 3])
def test_rounding_certificate_and_fact_one(p):
    rng = np.random.default_rng(int(10 * p))
    for _ in range(5):
        A = rng.standard_normal((80, 4)) * rng.uniform(0.1, 10, 4)
        F = wcb_rounding(A, p)
        _factor_invariants(A, F)
        assert wcb_check(F).passed
        w = row_pnorms(F.U, p) ** p
        assert w.sum() <= F.cert.alpha**p * (1 + 1e-12)


def test_rounding_non_convergence_carries_cert():
    A = np.random.default_rng(3).standard_normal((60, 4))
    with pytest.raises(RoundingError) as exc:
        wcb_rounding(A, 3, tol=1e-15, max_iter=2)
    assert exc.value.cert is not None


def test_check_fails_on_halved_alpha():
    F = wcb_orth(np.random.default_rng(4).standard_normal((30, 3)))
    bad = WcbFactorization(F.U, F.R, F.S, WcbCertificate(F.cert.alpha / 2, 1.0, PNorm(2), "orth"))
    res = wcb_check(bad)
    assert not res.passed and res.worst_alpha_ratio == pytest.approx(2)


@pytest.mark.parametrize("seed", range(6))
def test_spc3_identity_outcome_is_exact(seed):
    # U = diag(1/c_i) up to signs when buckets do not collide, so the beta
    # test passes exactly when every |c_i| <= 1
    F = wcb_spc3(np.eye(4), seed=seed)
    assert np.linalg.matrix_rank(F.U) == 4
    if np.count_nonzero(F.U) == 4:
        expect = col_pnorms(F.U, 1).min() >= 1 - 1e-12
        assert wcb_check(F).passed == expect


def test_spc3_determinism():
    A = np.random.default_rng(5).standard_normal((500, 5))
    F1, F2 = wcb_spc3(A, seed=3), wcb_spc3(A, seed=3)
    np.testing.assert_array_equal(F1.U, F2.U)
    assert F1.cert.alpha == pytest.approx(5**2.5)
    _factor_invariants(A, F1)


def test_spc3_sketch_size():
    assert spc3_rows(5) == math.ceil(8 * 5 * math.log2(6))


def test_counter_hash_is_order_free():
    rows = np.arange(10, dtype=np.int64)
    np.testing.assert_array_equal(counter_hash(1, rows, 2)[::-1], counter_hash(1, rows[::-1], 2))
    c = cauchy_variates(0, np.arange(20000))
    # median of |Cauchy| is 1
    assert np.median(np.abs(c)) == pytest.approx(1.0, abs=0.05)


def test_lewis_identity_and_l2():
    np.testing.assert_allclose(lewis_weights(np.eye(4), 1), np.ones(4), atol=1e-12)
    A = np.random.default_rng(6).standard_normal((40, 3))
    lev = np.einsum("ij,ji->i", A, np.linalg.solve(A.T @ A, A.T))
    np.testing.assert_allclose(lewis_weights(A, 2), lev, atol=1e-8)


def test_lewis_p1_sum_and_residual():
    A = np.random.default_rng(7).standard_normal((50, 3))
    w = lewis_weights(A, 1, tol=1e-10)
    assert w.sum() == pytest.approx(3, abs=1e-4)
    assert lewis_residual(A, w, 1) <= 10 * 1e-10


@pytest.mark.parametrize("p", [1.5, 4])
def test_lewis_general_p_converges(p):
    A = np.random.default_rng(8).standard_normal((60, 4))
    res = lewis_weights_full(A, p, tol=1e-10)
    assert res.converged and res.residual < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["orth", "rounding", "spc3"]),
       st.sampled_from([1.0, 1.5, 3.0]))
def test_change_of_basis_consistency(seed, method, p):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((40, 3))
    F = wcb(A, p, method, seed)
    x = rng.standard_normal((10, 3))
    lhs = row_pnorms(x @ (A @ F.R).T, p)
    rhs = row_pnorms(x @ F.U.T, p)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1.0, 1.5, 3.0]))
def test_recertified_orth_passes(seed, p):
    A = np.random.default_rng(seed).standard_normal((50, 4))
    assert wcb_check(wcb(A, p, "orth"), n_samples=300).passed
