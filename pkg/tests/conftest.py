"""Shared builders for synthetic streams used across the test suite."""
from __future__ import annotations

import numpy as np

from ssmf import MatrixFrame, RegimeSpec, SynthSpec


def unit_nonneg(rng: np.random.Generator, rows: int, k: int) -> np.ndarray:
    a = rng.random((rows, k))
    return a / np.linalg.norm(a, axis=0)


def separable_factors(rng, m, n, k):
    """Nonnegative unit-norm factors with disjoint column supports, so the
    factorization is identifiable and the initializer can recover it."""
    U = np.zeros((m, k))
    V = np.zeros((n, k))
    rows_per = m // k
    cols_per = n // k
    for c in range(k):
        U[c * rows_per : (c + 1) * rows_per, c] = rng.random(rows_per) + 0.5
        V[c * cols_per : (c + 1) * cols_per, c] = rng.random(cols_per) + 0.5
    U /= np.linalg.norm(U, axis=0)
    V /= np.linalg.norm(V, axis=0)
    return U, V


def periodic_frames(m, n, k, s, n_frames, seed=0, w_low=0.5, w_high=2.0):
    """Noise-free exactly periodic stream from separable factors.

    Returns (frames, U, V, W) with W the (s, k) weight rows.
    """
    rng = np.random.default_rng(seed)
    U, V = separable_factors(rng, m, n, k)
    W = rng.uniform(w_low, w_high, size=(s, k))
    frames = [
        MatrixFrame.from_dense(t, (U * W[t % s]) @ V.T) for t in range(n_frames)
    ]
    return frames, U, V, W


def square_profile_weights(s, k, rng, base_low=1.2, base_high=1.8, amp=0.6, level=1.0):
    """Half-season high / half-season low weight slice, one base per component."""
    base = rng.uniform(base_low, base_high, size=k)
    p = np.arange(s)
    prof = np.where(p < s // 2, 1.0, -1.0)[:, None] * np.ones((1, k))
    return np.clip(level * base[None, :] * (1.0 + amp * prof), 0.0, None)


def planted_shift_spec(
    m, n, k, s, shift_t, total, seed, noise=0.05, sparsity=0.5, amp=0.6, level=0.35
) -> SynthSpec:
    """Two-regime stream: the second regime drops the overall level and
    inverts the seasonal profile at ``shift_t``."""
    rng = np.random.default_rng(seed)
    base = rng.uniform(1.2, 1.8, size=k)
    p = np.arange(s)
    prof = np.where(p < s // 2, 1.0, -1.0)[:, None] * np.ones((1, k))
    w1 = np.clip(base[None, :] * (1.0 + amp * prof), 0.0, None)
    w2 = np.clip(level * base[None, :] * (1.0 - amp * prof), 0.0, None)
    return SynthSpec(
        m=m,
        n=n,
        k=k,
        s=s,
        regimes=[RegimeSpec(shift_t, w1), RegimeSpec(total - shift_t, w2)],
        noise_sigma=noise,
        sparsity=sparsity,
        seed=seed,
    )
