"""Objective and analytic gradient on pre-residualized data.

For each outcome time point i > p the objective adds

    (a) cor(Y_i a, T_p | T_1, X)
    (b) - lam / (p - 1) * sum_j cor^2(Y_i a, T_j | T_p, X)
    (c) - 1 / (K - 1) * sum_k cos_{M_i}(a_k, a)

where cos_M is the cosine under the inner product of the raw item
correlation matrix M_i. Residualization is linear, so every quantity is a
function of a handful of cached Gram matrices; after ``prepare`` no
regression is run and an evaluation costs O((m - p) q^2).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjection, DegenerateVariance, DimensionMismatch
from .stats import VARIANCE_FLOOR, Residualizer, correlation_matrix, correlation_pvalue

NORM_FLOOR = 1e-12
MAIN_TERMS = ("correlation", "mse")


class DroppedColumnWarning(UserWarning):
    """A constant or collinear conditioning column was removed from a basis."""


def conditioning_basis(columns, names):
    """Drop constant and collinear columns (in order) and return the kept block.

    Returns ``(matrix, kept_names, dropped_names)``.
    """
    n = columns.shape[0]
    kept, kept_names, dropped = [], [], []
    for col, name in zip(columns.T, names):
        c = col - col.mean()
        ss = c @ c
        if ss / n < VARIANCE_FLOOR:
            dropped.append(name)
            continue
        if kept:
            K = np.column_stack(kept)
            coef, *_ = np.linalg.lstsq(K, c, rcond=None)
            r = c - K @ coef
            if (r @ r) < 1e-10 * ss:
                dropped.append(name)
                continue
        kept.append(c)
        kept_names.append(name)
    if dropped:
        warnings.warn(f"dropped degenerate conditioning columns: {dropped}", DroppedColumnWarning,
                      stacklevel=3)
    block = np.column_stack(kept) if kept else np.empty((n, 0))
    return block, kept_names, dropped


@dataclass(frozen=True, eq=False)
class PreparedProblem:
    """Residualized data and cached Gram matrices for every outcome time point.

    Arrays indexed by ``t`` run over time points ``p + 1 .. m``; arrays
    indexed by ``j`` run over historical treatments ``T_1 .. T_{p-1}``.
    """

    n: int
    q: int
    p: int
    m: int
    # term (a): items and T_p residualized on {T_1, X}
    main_resid: np.ndarray  # (T, n, q)
    main_treatment: np.ndarray  # (n,)
    main_gram: np.ndarray  # (T, q, q)
    main_cross: np.ndarray  # (T, q)
    main_tnorm: float
    main_k: int
    # term (b): items and each T_j residualized on {T_p, X}
    conf_resid: np.ndarray  # (T, n, q)
    conf_history: np.ndarray  # (n, J)
    conf_gram: np.ndarray  # (T, q, q)
    conf_cross: np.ndarray  # (T, J, q)
    conf_tnorm: np.ndarray  # (J,)
    conf_k: int
    # term (c)
    item_corr: np.ndarray  # (T, q, q)
    dropped: tuple = ()

    @property
    def n_timepoints(self):
        return self.m - self.p

    @property
    def n_history(self):
        return self.p - 1

    @property
    def main_degenerate(self):
        return self.main_tnorm ** 2 / self.n < VARIANCE_FLOOR

    @property
    def history_degenerate(self):
        return self.conf_tnorm ** 2 / self.n < VARIANCE_FLOOR

    def _check(self, alpha):
        a = np.asarray(alpha, dtype=float)
        if a.shape != (self.q,):
            raise DimensionMismatch(f"weight vector has shape {a.shape}, expected ({self.q},)")
        return a

    def main_correlations(self, alpha):
        """Per-time-point cor(Y_i a, T_p | T_1, X)."""
        a = self._check(alpha)
        s2 = np.einsum("tij,i,j->t", self.main_gram, a, a)
        c = self.main_cross @ a
        ok = (s2 / self.n >= VARIANCE_FLOOR) & (not self.main_degenerate)
        r = np.where(ok, c / (np.sqrt(np.maximum(s2, NORM_FLOOR ** 2)) * max(self.main_tnorm, NORM_FLOOR)), 0.0)
        return np.clip(r, -1.0, 1.0)

    def main_pvalues(self, alpha):
        r = self.main_correlations(alpha)
        return np.where(r == 0.0, 1.0, correlation_pvalue(r, self.n, self.main_k))

    def confounding_correlations(self, alpha):
        """(T, J) array of cor(Y_i a, T_j | T_p, X)."""
        a = self._check(alpha)
        s2 = np.einsum("tij,i,j->t", self.conf_gram, a, a)
        c = self.conf_cross @ a
        ok = (s2 / self.n >= VARIANCE_FLOOR)[:, None] & ~self.history_degenerate[None, :]
        denom = np.sqrt(np.maximum(s2, NORM_FLOOR ** 2))[:, None] * np.maximum(self.conf_tnorm, NORM_FLOOR)[None, :]
        return np.clip(np.where(ok, c / denom, 0.0), -1.0, 1.0)

    def confounding_pvalues(self, alpha):
        """(T, J) two-sided p-values of the confounding test."""
        r = self.confounding_correlations(alpha)
        return np.where(r == 0.0, 1.0, correlation_pvalue(r, self.n, self.conf_k))


def prepare(dataset):
    """Residualize once and cache everything the objective needs."""
    n, p, q = dataset.n, dataset.p, dataset.q
    T = dataset.outcomes.shape[0]
    X = dataset.covariates
    xnames = [f"x_{c}" for c in dataset.covariate_names]
    t1, tp = dataset.treatments[:, 0], dataset.treatments[:, -1]
    history = dataset.treatments[:, :-1]

    main_cols, _, dropped_a = conditioning_basis(np.column_stack([t1, X]), ["t1"] + xnames)
    conf_cols, _, dropped_b = conditioning_basis(np.column_stack([tp, X]), [f"t{p}"] + xnames)

    flat = dataset.outcomes.transpose(1, 0, 2).reshape(n, T * q)
    res_a = Residualizer(main_cols)
    main_resid = res_a(flat).reshape(n, T, q).transpose(1, 0, 2)
    main_treatment = res_a(tp)
    res_b = Residualizer(conf_cols)
    conf_resid = res_b(flat).reshape(n, T, q).transpose(1, 0, 2)
    conf_history = res_b(history)

    item_corr = np.empty((T, q, q))
    for t in range(T):
        try:
            item_corr[t] = correlation_matrix(dataset.outcomes[t])
        except DegenerateVariance as exc:
            raise DegenerateVariance(f"time point {p + 1 + t}: {exc}", column=exc.column) from exc

    return PreparedProblem(
        n=n, q=q, p=p, m=p + T,
        main_resid=main_resid,
        main_treatment=main_treatment,
        main_gram=np.einsum("tni,tnj->tij", main_resid, main_resid),
        main_cross=np.einsum("tni,n->ti", main_resid, main_treatment),
        main_tnorm=float(np.sqrt(main_treatment @ main_treatment)),
        main_k=main_cols.shape[1],
        conf_resid=conf_resid,
        conf_history=conf_history,
        conf_gram=np.einsum("tni,tnj->tij", conf_resid, conf_resid),
        conf_cross=np.einsum("tni,nj->tji", conf_resid, conf_history),
        conf_tnorm=np.sqrt(np.einsum("nj,nj->j", conf_history, conf_history)),
        conf_k=conf_cols.shape[1],
        item_corr=item_corr,
        dropped=tuple(dropped_a + dropped_b),
    )


@dataclass(frozen=True)
class ObjectiveBreakdown:
    total: float
    main_correlation: float
    confounding_penalty: float
    orthogonality_penalty: float
    per_time_point: np.ndarray  # (T, 3): main, confounding, orthogonality

    def to_dict(self):
        return {
            "total": self.total,
            "main_correlation": self.main_correlation,
            "confounding_penalty": self.confounding_penalty,
            "orthogonality_penalty": self.orthogonality_penalty,
            "per_time_point": self.per_time_point.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["total"], d["main_correlation"], d["confounding_penalty"],
                   d["orthogonality_penalty"], np.asarray(d["per_time_point"], dtype=float))


def check_weight_vector(alpha, q=None, tol=1e-10):
    a = np.asarray(alpha, dtype=float)
    if a.ndim != 1 or (q is not None and a.shape[0] != q):
        raise DimensionMismatch(f"weight vector must have length {q}")
    if np.any(a < 0) or abs(a.sum() - 1.0) > tol:
        raise ValueError("weight vector must be non-negative and sum to 1")
    return a


class Objective:
    """The objective for fixed ``lam`` and previously extracted scores.

    ``main="mse"`` swaps term (a) for the negative mean squared error
    between the residualized score and residualized T_p (an ablation).
    Penalty terms are unchanged.
    """

    def __init__(self, problem, lam, previous=(), main="correlation"):
        if main not in MAIN_TERMS:
            raise ValueError(f"main term must be one of {MAIN_TERMS}")
        if lam < 0:
            raise ValueError("lambda must be non-negative")
        self.problem = problem
        self.lam = float(lam)
        self.main = main
        P = problem
        prev = [check_weight_vector(a, P.q) for a in previous]
        self.n_previous = len(prev)
        if prev:
            A = np.stack(prev)  # (K-1, q)
            self._m_prev = np.einsum("tij,kj->kti", P.item_corr, A)  # (K-1, T, q)
            self._n_prev = np.sqrt(np.maximum(np.einsum("kti,ki->kt", self._m_prev, A), NORM_FLOOR ** 2))
        self._hist_ok = ~P.history_degenerate
        self._tnorm_b = np.maximum(P.conf_tnorm, NORM_FLOOR)
        self._main_ok = not P.main_degenerate
        self._tnorm_a = max(P.main_tnorm, NORM_FLOOR)

    # the pieces below share intermediates between value and gradient

    def _main_parts(self, a):
        P = self.problem
        Ga = P.main_gram @ a  # (T, q)
        s2 = Ga @ a
        c = P.main_cross @ a
        return Ga, s2, c

    def _main_value(self, a, parts):
        P = self.problem
        Ga, s2, c = parts
        if self.main == "mse":
            return -(s2 - 2.0 * c + P.main_tnorm ** 2) / P.n
        if not self._main_ok:
            return np.zeros(P.n_timepoints)
        s = np.sqrt(np.maximum(s2, NORM_FLOOR ** 2))
        r = c / (s * self._tnorm_a)
        return np.where(s2 / P.n >= VARIANCE_FLOOR, r, 0.0)

    def _conf_parts(self, a):
        P = self.problem
        Ga = P.conf_gram @ a
        s2 = Ga @ a
        s = np.sqrt(np.maximum(s2, NORM_FLOOR ** 2))
        c = P.conf_cross @ a  # (T, J)
        ok = (s2 / P.n >= VARIANCE_FLOOR)[:, None] & self._hist_ok[None, :]
        r = np.where(ok, c / (s[:, None] * self._tnorm_b[None, :]), 0.0)
        return Ga, s, r

    def _orth_parts(self, a):
        P = self.problem
        Ma = P.item_corr @ a  # (T, q)
        u2 = Ma @ a
        return Ma, u2

    def _orth_value(self, a, Ma, u2):
        u = np.sqrt(np.maximum(u2, NORM_FLOOR ** 2))
        sim = (self._m_prev @ a) / (self._n_prev * u[None, :])  # (K-1, T)
        return sim, u

    def breakdown(self, alpha):
        P = self.problem
        a = P._check(alpha)
        main_t = self._main_value(a, self._main_parts(a))
        if self.lam > 0 and P.n_history:
            _, _, r = self._conf_parts(a)
            conf_t = self.lam / P.n_history * np.sum(r * r, axis=1)
        else:
            conf_t = np.zeros(P.n_timepoints)
        if self.n_previous:
            Ma, u2 = self._orth_parts(a)
            sim, _ = self._orth_value(a, Ma, u2)
            orth_t = sim.mean(axis=0)
        else:
            orth_t = np.zeros(P.n_timepoints)
        main, conf, orth = float(main_t.sum()), float(conf_t.sum()), float(orth_t.sum())
        return ObjectiveBreakdown(
            total=main - conf - orth,
            main_correlation=main,
            confounding_penalty=conf,
            orthogonality_penalty=orth,
            per_time_point=np.column_stack([main_t, conf_t, orth_t]),
        )

    def value(self, alpha):
        return self.breakdown(alpha).total

    def gradient(self, alpha):
        P = self.problem
        a = P._check(alpha)
        Ma, u2 = self._orth_parts(a)
        if np.any(u2 <= NORM_FLOOR):
            raise DegenerateProjection("alpha' M_i alpha vanished; score has no spread")

        Ga, s2, c = self._main_parts(a)
        if self.main == "mse":
            g = -2.0 / P.n * (Ga - P.main_cross).sum(axis=0)
        elif self._main_ok:
            ok = s2 / P.n >= VARIANCE_FLOOR
            s = np.sqrt(np.maximum(s2, NORM_FLOOR ** 2))
            ga = P.main_cross / (s * self._tnorm_a)[:, None] - (c / (s ** 3 * self._tnorm_a))[:, None] * Ga
            g = ga[ok].sum(axis=0)
        else:
            g = np.zeros(P.q)

        if self.lam > 0 and P.n_history:
            Gb, sb, r = self._conf_parts(a)
            # d r_tj / da = cross_tj / (s_t |b_j|) - r_tj / s_t^2 * Gb_t
            lin = np.einsum("tj,tji->ti", r / (sb[:, None] * self._tnorm_b[None, :]), P.conf_cross)
            quad = (np.sum(r * r, axis=1) / sb ** 2)[:, None] * Gb
            g = g - 2.0 * self.lam / P.n_history * (lin - quad).sum(axis=0)

        if self.n_previous:
            sim, u = self._orth_value(a, Ma, u2)
            # d/da of (a_k' M a) / (|a_k|_M |a|_M)
            first = self._m_prev / (self._n_prev * u[None, :])[:, :, None]
            second = (sim / u[None, :] ** 2)[:, :, None] * Ma[None, :, :]
            g = g - (first - second).mean(axis=0).sum(axis=0)
        return g


def evaluate(problem, alpha, lam, previous=(), main="correlation"):
    return Objective(problem, lam, previous, main).breakdown(alpha)


def gradient(problem, alpha, lam, previous=(), main="correlation"):
    return Objective(problem, lam, previous, main).gradient(alpha)
