"""Synthetic dataset generators for the experiment harness."""

from __future__ import annotations

import numpy as np

GENERATORS = ("gaussian", "heavytail", "augmented-identity", "census-like")


def _targets(rng, A, noise, heavy=False):
    x0 = rng.standard_normal(A.shape[1])
    e = rng.standard_t(3, size=A.shape[0]) if heavy else rng.standard_normal(A.shape[0])
    return A @ x0 + noise * e


def gen_dataset(name: str, n: int = 1000, d: int = 8, k: int = 3, noise: float = 1.0,
                scale: float = 10.0, seed: int = 0):
    """Return ``(A, b, meta)`` for a named generator; reproducible for a fixed seed.

    ``augmented-identity`` stacks an ``n x d`` block ``scale * X`` over ``k`` unit
    rows living in ``k`` extra columns, then permutes rows; ``meta["planted"]``
    lists the unit rows' final positions. ``census-like`` draws integer,
    right-skewed columns from a pool of distinct records so that rows repeat,
    with a few rare records carrying one large entry.
    """
    if n < 1 or d < 1 or k < 0:
        raise ValueError("need n >= 1, d >= 1 and k >= 0")
    rng = np.random.default_rng(seed)
    meta: dict = {"name": name, "n": n, "d": d, "seed": seed}
    if name == "gaussian":
        A = rng.standard_normal((n, d))
        b = _targets(rng, A, noise)
    elif name == "heavytail":
        A = rng.standard_t(2, size=(n, d))
        b = _targets(rng, A, noise, heavy=True)
    elif name == "augmented-identity":
        X = scale * rng.standard_normal((n, d))
        top = np.hstack([X, np.zeros((n, k))])
        bottom = np.hstack([np.zeros((k, d)), np.eye(k)])
        A = np.vstack([top, bottom])
        perm = rng.permutation(n + k)
        A = A[perm]
        inv = np.empty_like(perm)
        inv[perm] = np.arange(n + k)
        meta["planted"] = sorted(int(inv[n + j]) for j in range(k))
        meta["n"], meta["d"] = n + k, d + k
        b = _targets(rng, A, noise)
    elif name == "census-like":
        pool = max(n // 4, d + 1)
        base = np.floor(rng.lognormal(mean=1.0, sigma=1.0, size=(pool, d)))
        # sparse: most fields are zero for most records
        base *= rng.random((pool, d)) < 0.45
        base[:, 0] = 1.0  # intercept column
        rare = rng.choice(pool, size=min(d, pool), replace=False)
        for j, r in enumerate(rare):
            base[r] = 0.0
            base[r, 0] = 1.0
            base[r, j % d] = np.floor(50 + 50 * rng.random())
        # heavy but not degenerate repetition: weight ~ 1/rank
        freq = 1.0 / (1.0 + rng.permutation(pool))
        freq[rare] = freq.min()
        picks = rng.choice(pool, size=n, p=freq / freq.sum())
        picks[: len(rare)] = rare
        picks = rng.permutation(picks)
        A = base[picks]
        x0 = rng.integers(-3, 4, size=d).astype(float)
        b = A @ x0 + np.round(noise * 2 * rng.standard_normal(n))
        meta["duplicate_rate"] = float(1 - np.unique(A, axis=0).shape[0] / n)
        meta["zero_fraction"] = float(np.mean(A == 0))
    else:
        raise ValueError(f"unknown dataset {name!r}; choose from {GENERATORS}")
    return A, b, meta
