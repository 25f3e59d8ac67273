"""Shared data builders and independent oracles for the test suite."""

import numpy as np

from debias.data import LongitudinalDataset


def random_dataset(n=60, q=8, m=5, p=2, r=2, seed=0):
    """Generic correlated data; no structure the tests rely on beyond randomness."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, r))
    T = np.empty((n, p))
    T[:, 0] = rng.binomial(1, 0.5, size=n)
    for j in range(1, p):
        T[:, j] = rng.binomial(1, 0.3 + 0.4 * T[:, j - 1])
    mix = rng.normal(size=(q, q)) * 0.5 + np.eye(q)
    Y = np.empty((m - p, n, q))
    for t in range(m - p):
        Y[t] = rng.normal(size=(n, q)) @ mix + np.outer(T[:, -1], rng.normal(size=q)) \
            + np.outer(T[:, 0], rng.normal(size=q) * 0.5) + X @ rng.normal(size=(r, q)) * 0.3
    return LongitudinalDataset(T, Y, X)


def planted_dataset(n=200, q=10, m=5, p=2, noise_sd=1.0, seed=0, planted=(0,)):
    """Planted items equal T_p exactly; every other item is independent noise."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    T = np.empty((n, p))
    T[:, 0] = rng.binomial(1, 0.5, size=n)
    for j in range(1, p):
        T[:, j] = rng.binomial(1, 0.3 + 0.4 * T[:, j - 1])
    Y = noise_sd * rng.normal(size=(m - p, n, q))
    for k in planted:
        Y[:, :, k] = T[:, -1]
    return LongitudinalDataset(T, Y, X)


def _resid(v, Z):
    Zi = np.column_stack([np.ones(len(v)), Z])
    coef, *_ = np.linalg.lstsq(Zi, v, rcond=None)
    return v - Zi @ coef


def _cor(a, b):
    if a @ a / len(a) < 1e-12 or b @ b / len(b) < 1e-12:
        return 0.0
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def oracle_objective(ds, alpha, lam, previous=()):
    """Uncached objective: residualize the projected score directly at every call."""
    t1, tp, X = ds.treatments[:, 0], ds.treatments[:, -1], ds.covariates
    total = 0.0
    for t in range(ds.outcomes.shape[0]):
        Y = ds.outcomes[t]
        score = Y @ alpha
        main = _cor(_resid(score, np.column_stack([t1, X])), _resid(tp, np.column_stack([t1, X])))
        zb = np.column_stack([tp, X])
        conf = sum(_cor(_resid(score, zb), _resid(ds.treatments[:, j], zb)) ** 2 for j in range(ds.p - 1))
        conf *= lam / (ds.p - 1)
        orth = 0.0
        if previous:
            M = np.corrcoef(Y, rowvar=False)
            for ak in previous:
                orth += ak @ M @ alpha / np.sqrt(ak @ M @ ak) / np.sqrt(alpha @ M @ alpha)
            orth /= len(previous)
        total += main - conf - orth
    return total


def finite_difference(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def mahalanobis_cosine(a, b, M):
    return float(a @ M @ b / np.sqrt((a @ M @ a) * (b @ M @ b)))
