"""Residualization, partial correlation and effect-size utilities.

Everything here is a pure function of its inputs. Conditioning sets always
carry an implicit intercept, so residuals are centered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    EmptyList,
    InsufficientSamples,
    InvalidProportion,
    RankDeficientBasis,
    SingleGroup,
)

VARIANCE_FLOOR = 1e-12
PVALUE_FLOOR = 1e-300


@dataclass(frozen=True)
class ResidualizationBasis:
    """Conditioning variables for least-squares residualization.

    An intercept is always included and is not stored in ``columns``.
    """

    columns: np.ndarray
    includes_intercept: bool = field(default=True, init=False)

    def __post_init__(self):
        cols = np.asarray(self.columns, dtype=float)
        if cols.ndim == 1:
            cols = cols[:, None]
        if cols.ndim != 2:
            raise DimensionMismatch("basis columns must be a 2-D array")
        if not np.all(np.isfinite(cols)):
            raise ValueError("basis contains non-finite entries")
        object.__setattr__(self, "columns", cols)

    @classmethod
    def empty(cls, n):
        return cls(np.empty((n, 0)))

    @property
    def n(self):
        return self.columns.shape[0]

    @property
    def k(self):
        return self.columns.shape[1]


def _as_basis(basis, n=None):
    if basis is None:
        return ResidualizationBasis.empty(n)
    if isinstance(basis, ResidualizationBasis):
        return basis
    return ResidualizationBasis(basis)


class Residualizer:
    """Factorizes a basis once so many targets can be residualized cheaply.

    Solves the centered normal equations by Cholesky. If the Gram matrix is
    numerically singular, a ridge of ``1e-10 * trace / k`` is added and the
    factorization retried before giving up.
    """

    def __init__(self, basis):
        basis = _as_basis(basis)
        n, k = basis.n, basis.k
        if n <= k + 1:
            raise InsufficientSamples(f"need n > {k + 1} samples for {k} basis columns, got {n}")
        self.n, self.k = n, k
        self.ridged = False
        Z = basis.columns - basis.columns.mean(axis=0)
        self._Z = Z
        self._factor = None
        if k == 0:
            return
        G = Z.T @ Z
        try:
            self._factor = self._cholesky(G)
        except (np.linalg.LinAlgError, linalg.LinAlgError):
            ridge = 1e-10 * np.trace(G) / k
            try:
                self._factor = self._cholesky(G + ridge * np.eye(k), strict=False)
            except (np.linalg.LinAlgError, linalg.LinAlgError) as exc:
                raise RankDeficientBasis("basis is singular even after ridge fallback") from exc
            self.ridged = True

    @staticmethod
    def _cholesky(G, strict=True):
        c, low = linalg.cho_factor(G, lower=False, check_finite=False)
        d = np.abs(np.diag(c))
        if d.min() <= 0 or (strict and (d.min() / d.max()) ** 2 < 1e-13):
            raise np.linalg.LinAlgError("numerically singular Gram matrix")
        return c, low

    def __call__(self, target):
        y = np.asarray(target, dtype=float)
        if y.shape[0] != self.n:
            raise DimensionMismatch(f"target has {y.shape[0]} rows, basis has {self.n}")
        r = y - y.mean(axis=0)
        if self.k == 0:
            return r
        Z = self._Z
        beta = linalg.cho_solve(self._factor, Z.T @ r, check_finite=False)
        r = r - Z @ beta
        # one step of iterative refinement tightens orthogonality
        beta = linalg.cho_solve(self._factor, Z.T @ r, check_finite=False)
        return r - Z @ beta


def residualize(target, basis):
    """Least-squares residuals of ``target`` (vector or matrix) on ``basis`` plus intercept."""
    target = np.asarray(target, dtype=float)
    return Residualizer(_as_basis(basis, target.shape[0]))(target)


@dataclass(frozen=True)
class PartialCorrelationResult:
    r: float
    k: int
    n: int
    p_value: float
    degenerate: bool = False


def correlation_pvalue(r, n, k):
    """Two-sided t-test p-value for a (partial) correlation with ``k`` conditioning variables.

    Works elementwise on arrays. Uses t = r * sqrt(df / (1 - r^2)) with
    df = n - 2 - k; the two-sided tail equals I_{df/(df+t^2)}(df/2, 1/2).
    """
    df = n - 2 - k
    if df < 1:
        raise InsufficientSamples(f"no residual degrees of freedom (n={n}, k={k})")
    r2 = np.minimum(np.square(r), 1.0)
    # df/(df+t^2) simplifies to 1 - r^2
    p = special.betainc(df / 2.0, 0.5, 1.0 - r2)
    if np.ndim(p) == 0:
        return float(p)
    return p


def pearson(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ac = a - a.mean()
    bc = b - b.mean()
    ssa, ssb = ac @ ac, bc @ bc
    n = a.shape[0]
    if ssa / n < VARIANCE_FLOOR or ssb / n < VARIANCE_FLOOR:
        raise DegenerateVariance("zero-variance input to correlation")
    return float(np.clip((ac @ bc) / math.sqrt(ssa * ssb), -1.0, 1.0))


def partial_correlation(a, b, basis=None):
    """Pearson correlation of ``a`` and ``b`` after residualizing both on ``basis``.

    A residual with variance below 1e-12 yields ``r=0, p_value=1`` and
    ``degenerate=True`` instead of an exception.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch("a and b must be vectors of equal length")
    basis = _as_basis(basis, a.shape[0])
    n, k = a.shape[0], basis.k
    if basis.n != n:
        raise DimensionMismatch("basis rows differ from vector length")
    if n <= k + 3:
        raise InsufficientSamples(f"partial correlation needs n > k + 3 (n={n}, k={k})")
    res = Residualizer(basis)
    ra, rb = res(a), res(b)
    ssa, ssb = ra @ ra, rb @ rb
    if ssa / n < VARIANCE_FLOOR or ssb / n < VARIANCE_FLOOR:
        return PartialCorrelationResult(0.0, k, n, 1.0, degenerate=True)
    r = float(np.clip((ra @ rb) / math.sqrt(ssa * ssb), -1.0, 1.0))
    return PartialCorrelationResult(r, k, n, correlation_pvalue(r, n, k))


def correlation_matrix(items):
    """Pearson correlation matrix of the columns of ``items``."""
    Y = np.asarray(items, dtype=float)
    if Y.ndim != 2:
        raise DimensionMismatch("items must be 2-D")
    n = Y.shape[0]
    if n < 2:
        raise InsufficientSamples("need at least two rows")
    Yc = Y - Y.mean(axis=0)
    ss = np.einsum("ij,ij->j", Yc, Yc)
    bad = np.flatnonzero(ss / n <= VARIANCE_FLOOR)
    if bad.size:
        raise DegenerateVariance(f"column {bad[0]} has zero variance", column=int(bad[0]))
    Yn = Yc / np.sqrt(ss)
    M = Yn.T @ Yn
    M = np.clip((M + M.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(M, 1.0)
    return M


def cohen_d(outcome, treatment):
    """Standardized mean difference with proportion-weighted population variances."""
    y = np.asarray(outcome, dtype=float)
    t = np.asarray(treatment)
    if y.shape != t.shape:
        raise DimensionMismatch("outcome and treatment lengths differ")
    treated = t == 1
    control = t == 0
    if not treated.any() or not control.any():
        raise SingleGroup("both treatment levels must be present")
    if not np.all(treated | control):
        raise ValueError("treatment must be coded 0/1")
    p = treated.mean()
    y1, y0 = y[treated], y[control]
    pooled = p * y1.var() + (1 - p) * y0.var()
    if pooled <= 0:
        raise DegenerateVariance("pooled within-group variance is zero")
    return float((y1.mean() - y0.mean()) / math.sqrt(pooled))


def _check_proportion(p):
    if not 0.0 < p < 1.0:
        raise InvalidProportion(f"treated proportion must lie in (0, 1), got {p}")


def d_to_r(d, p):
    _check_proportion(p)
    s = p * (1 - p)
    return math.sqrt(s) * d / math.sqrt(1 + s * d * d)


def r_to_d(r, p):
    _check_proportion(p)
    if not -1.0 < r < 1.0:
        raise ValueError("r must lie strictly inside (-1, 1)")
    return r / (math.sqrt(p * (1 - p)) * math.sqrt(1 - r * r))


def geometric_mean(values):
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise EmptyList("geometric mean of an empty list")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError("geometric mean needs finite non-negative values")
    return float(np.exp(np.mean(np.log(np.maximum(v, PVALUE_FLOOR)))))
