"""Seeded synthetic data generators used by the tests, benchmarks and examples."""

from __future__ import annotations

import numpy as np

from .kernels import grid_make
from .linmodel import LinRegData
from .priors import as_generator

__all__ = [
    "cp_tensor",
    "multi_periodic_series",
    "sparse_linear",
    "two_arcs",
    "two_tone_series",
]


def sparse_linear(n=100, n_features=20, support=(3, 11), coefs=(1.5, -2.0), noise=0.05, rng=None):
    """Gaussian design with ``y`` generated from a few columns."""
    rng = as_generator(rng)
    X = rng.standard_normal((n, n_features))
    w = np.zeros(n_features)
    w[list(support)] = coefs
    return LinRegData(X, X @ w + noise * rng.standard_normal(n)), w


def two_tone_series(n=200, Q=50, bins=(7, 23), amplitudes=(1.0, 0.7), noise=1e-3,
                    sigma=1e-3, rng=None):
    """Two sinusoids sitting exactly on GridSM bins, at integer times ``0..n-1``.

    Returns ``(t, y, grid)`` where ``grid`` is the zero-weight GridSM kernel
    whose bins ``bins`` carry the two tones.
    """
    rng = as_generator(rng)
    grid = grid_make(Q, sigma=sigma)
    t = np.arange(n, dtype=float)
    y = noise * rng.standard_normal(n)
    for b, a in zip(bins, amplitudes):
        y += a * np.sin(2 * np.pi * grid.means[b] * t + rng.uniform(0, 2 * np.pi))
    return t, y, grid


def multi_periodic_series(n=170, freqs=(0.05, 0.13, 0.21), amplitudes=(1.0, 0.6, 0.4),
                          noise=0.1, rng=None):
    """Sum of sinusoids with random phases plus white noise at times ``0..n-1``."""
    rng = as_generator(rng)
    t = np.arange(n, dtype=float)
    y = noise * rng.standard_normal(n)
    for f, a in zip(freqs, amplitudes):
        y += a * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    return t, y


def cp_tensor(dims, rank, snr_db=20.0, rng=None):
    """Low-rank tensor with i.i.d. Gaussian factors plus noise at a given SNR.

    Returns ``(noisy, clean, factors)``; the SNR is
    ``10 log10(var(clean) / noise_var)``.
    """
    rng = as_generator(rng)
    factors = [rng.standard_normal((J, rank)) for J in dims]
    clean = _cp_full(factors)
    noise_var = np.var(clean) / 10 ** (snr_db / 10)
    noisy = clean + np.sqrt(noise_var) * rng.standard_normal(clean.shape)
    return noisy, clean, factors


def _cp_full(factors):
    P = len(factors)
    letters = "abcdefghijklmnopq"[:P]
    expr = ",".join(f"{c}z" for c in letters) + "->" + letters
    return np.einsum(expr, *factors)


def two_arcs(n=400, noise=0.1, rng=None):
    """Two interleaving half circles with labels 0 and 1."""
    rng = as_generator(rng)
    n0 = n // 2
    n1 = n - n0
    a0 = rng.uniform(0, np.pi, n0)
    a1 = rng.uniform(0, np.pi, n1)
    X0 = np.column_stack([np.cos(a0), np.sin(a0)])
    X1 = np.column_stack([1 - np.cos(a1), 0.5 - np.sin(a1)])
    X = np.vstack([X0, X1]) + noise * rng.standard_normal((n, 2))
    y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    perm = rng.permutation(n)
    return X[perm], y[perm]
