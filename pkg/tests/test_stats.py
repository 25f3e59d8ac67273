import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats as sps

from debias.errors import (
    DegenerateVariance,
    EmptyList,
    InsufficientSamples,
    InvalidProportion,
    RankDeficientBasis,
    SingleGroup,
)
from debias.stats import (
    ResidualizationBasis,
    cohen_d,
    correlation_matrix,
    correlation_pvalue,
    d_to_r,
    geometric_mean,
    partial_correlation,
    pearson,
    r_to_d,
    residualize,
)


def rng(seed=0):
    return np.random.default_rng(seed)


# residualize


def test_self_regression_gives_zero_residual():
    b = rng().normal(size=30)
    assert np.allclose(residualize(b, ResidualizationBasis(b)), 0, atol=1e-12)


def test_centered_orthogonal_target_is_unchanged():
    b = np.array([1.0, -1.0, 1.0, -1.0, 0.0, 0.0])
    y = np.array([1.0, 1.0, -1.0, -1.0, 0.5, -0.5])
    assert abs(b @ y) < 1e-15 and abs(y.sum()) < 1e-15
    assert np.allclose(residualize(y, ResidualizationBasis(b)), y, atol=1e-14)


def test_small_instance_matches_symbolic_normal_equations():
    y = sp.Matrix([1, 2, 3, 4])
    Xs = sp.Matrix([[1, 1], [1, 1], [1, 2], [1, 2]])
    beta = (Xs.T * Xs).solve(Xs.T * y)
    expected = np.array([float(v) for v in (y - Xs * beta)])
    # frozen from the symbolic solve: slope 2, intercept -1
    assert np.allclose(expected, [-0.5, 0.5, -0.5, 0.5], atol=0)
    got = residualize(np.array([1.0, 2, 3, 4]), ResidualizationBasis(np.array([1.0, 1, 2, 2])))
    assert np.max(np.abs(got - expected)) < 1e-10


def test_matrix_target_and_orthogonality():
    r = rng(1)
    B = r.normal(size=(50, 3))
    Y = r.normal(size=(50, 4)) + B @ r.normal(size=(3, 4))
    R = residualize(Y, ResidualizationBasis(B))
    assert R.shape == Y.shape
    assert np.max(np.abs(B.T @ R)) < 1e-8
    assert np.max(np.abs(R.sum(axis=0))) < 1e-8


def test_empty_basis_centers():
    y = np.array([1.0, 2.0, 6.0])
    assert np.allclose(residualize(y, ResidualizationBasis.empty(3)), y - 3.0)


def test_insufficient_samples():
    with pytest.raises(InsufficientSamples):
        residualize(np.ones(3), ResidualizationBasis(np.eye(3)[:, :2]))


def test_constant_basis_column_is_rank_deficient():
    with pytest.raises(RankDeficientBasis):
        residualize(rng().normal(size=10), ResidualizationBasis(np.ones(10)))


def test_collinear_basis_falls_back_to_ridge():
    b = rng(2).normal(size=40)
    basis = ResidualizationBasis(np.column_stack([b, 2 * b]))
    y = 3 * b + rng(3).normal(size=40)
    res = residualize(y, basis)
    assert abs(res @ b) < 1e-6 * np.linalg.norm(b) * np.linalg.norm(res)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 4))
def test_residualize_is_idempotent_and_orthogonal(seed, k):
    r = rng(seed)
    B = r.normal(size=(25, k))
    y = r.normal(size=25) * r.uniform(0.1, 10)
    basis = ResidualizationBasis(B)
    once = residualize(y, basis)
    twice = residualize(once, basis)
    assert np.max(np.abs(twice - once)) < 1e-10
    assert np.max(np.abs(B.T @ once), initial=0) < 1e-8
    assert abs(once.sum()) < 1e-8


# partial correlation


def test_identical_vectors_correlate_perfectly():
    a = rng().normal(size=20)
    res = partial_correlation(a, a)
    assert res.r == pytest.approx(1.0, abs=1e-12)
    assert res.p_value < 1e-12


def test_orthogonal_vectors_have_zero_correlation():
    a = np.array([1.0, -1.0, 1.0, -1.0, 0, 0])
    b = np.array([1.0, 1.0, -1.0, -1.0, 0, 0])
    res = partial_correlation(a, b)
    assert res.r == pytest.approx(0.0, abs=1e-15)
    assert res.p_value == pytest.approx(1.0)


def _pinv_partial_corr(a, b, Z):
    Zi = np.column_stack([np.ones(len(a)), Z])
    H = Zi @ np.linalg.pinv(Zi)
    ra, rb = a - H @ a, b - H @ b
    return (ra @ rb) / math.sqrt((ra @ ra) * (rb @ rb))


def test_small_instance_matches_pinv_oracle():
    r = rng(7)
    Z = r.normal(size=(8, 2))
    a = Z @ [1.0, -0.5] + r.normal(size=8)
    b = Z @ [0.3, 0.8] + r.normal(size=8) + 0.5 * a
    res = partial_correlation(a, b, ResidualizationBasis(Z))
    assert abs(res.r - _pinv_partial_corr(a, b, Z)) < 1e-10
    assert res.k == 2 and res.n == 8


def test_pvalue_matches_t_distribution():
    for r, n, k in [(0.3, 50, 2), (-0.3, 50, 2), (0.05, 200, 0), (0.9, 12, 3)]:
        df = n - 2 - k
        t = r * math.sqrt(df / (1 - r * r))
        assert correlation_pvalue(r, n, k) == pytest.approx(2 * sps.t.sf(abs(t), df), rel=1e-10)


def test_degenerate_residual_is_flagged_not_raised():
    Z = rng().normal(size=(12, 1))
    res = partial_correlation(Z[:, 0] * 2 + 1, rng(1).normal(size=12), ResidualizationBasis(Z))
    assert res.degenerate and res.r == 0.0 and res.p_value == 1.0


def test_partial_correlation_needs_room():
    with pytest.raises(InsufficientSamples):
        partial_correlation(np.arange(5.0), np.arange(5.0) ** 2, ResidualizationBasis(np.ones((5, 2)) * [[1, 2]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10), st.floats(-5, 5), st.floats(0.1, 10), st.floats(-5, 5))
def test_partial_correlation_symmetric_and_affine_invariant(seed, s1, c1, s2, c2):
    r = rng(seed)
    Z = r.normal(size=(30, 2))
    a = r.normal(size=30) + Z[:, 0]
    b = r.normal(size=30) + 0.5 * a
    basis = ResidualizationBasis(Z)
    ab = partial_correlation(a, b, basis)
    assert ab == partial_correlation(b, a, basis)
    scaled = partial_correlation(s1 * a + c1, s2 * b + c2, basis)
    assert abs(scaled.r - ab.r) < 1e-10
    assert 0.0 <= ab.p_value <= 1.0


# correlation matrix


def test_identical_columns_give_all_ones():
    c = rng().normal(size=15)
    assert np.allclose(correlation_matrix(np.column_stack([c, c])), np.ones((2, 2)), atol=1e-15)


def test_orthogonal_columns_give_identity():
    Y = np.array([[1.0, 1], [-1, 1], [1, -1], [-1, -1]])
    assert np.allclose(correlation_matrix(Y), np.eye(2), atol=1e-15)


def test_correlation_matrix_matches_pairwise_pearson():
    Y = rng(4).normal(size=(40, 5)) @ rng(5).normal(size=(5, 5))
    M = correlation_matrix(Y)
    for i in range(5):
        for j in range(5):
            assert abs(M[i, j] - np.corrcoef(Y[:, i], Y[:, j])[0, 1]) < 1e-12
    assert np.linalg.eigvalsh(M).min() > -1e-8


def test_constant_column_reported_by_index():
    Y = rng().normal(size=(10, 3))
    Y[:, 1] = 4.0
    with pytest.raises(DegenerateVariance) as info:
        correlation_matrix(Y)
    assert info.value.column == 1


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (12, 4), elements=st.floats(-100, 100)))
def test_correlation_matrix_invariants(Y):
    if np.any(Y.var(axis=0) <= 1e-6):
        return
    M = correlation_matrix(Y)
    assert np.allclose(M, M.T)
    assert np.all(np.diag(M) == 1.0)
    assert np.all(np.abs(M) <= 1.0)
    assert np.linalg.eigvalsh(M).min() >= -1e-8


# effect sizes


def test_cohen_d_zero_for_identical_groups():
    vals = np.array([0.3, 1.2, -0.7, 2.0])
    assert cohen_d(np.concatenate([vals, vals]), np.repeat([1, 0], 4)) == 0.0


def test_cohen_d_unit_separation():
    y = np.array([0.0, 2.0, -1.0, 1.0])
    t = np.array([1, 1, 0, 0])
    assert cohen_d(y, t) == pytest.approx(1.0, abs=1e-15)


def test_cohen_d_matches_direct_formula():
    r = rng(8)
    y = r.normal(size=10)
    t = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1])
    y1, y0 = y[t == 1], y[t == 0]
    p = 6 / 10
    direct = (sum(y1) / 6 - sum(y0) / 4) / math.sqrt(
        p * sum((v - sum(y1) / 6) ** 2 for v in y1) / 6 + (1 - p) * sum((v - sum(y0) / 4) ** 2 for v in y0) / 4
    )
    assert abs(cohen_d(y, t) - direct) < 1e-12


def test_cohen_d_single_group():
    with pytest.raises(SingleGroup):
        cohen_d(np.arange(4.0), np.ones(4))


def test_d_to_r_values():
    for p in (0.1, 0.5, 0.9):
        assert d_to_r(0.0, p) == 0.0
    assert d_to_r(2.0, 0.5) == pytest.approx(1 / math.sqrt(2), abs=1e-15)


@pytest.mark.parametrize("p", [0.2, 0.5, 0.7])
def test_d_r_round_trip(p):
    for d in range(-3, 4):
        assert abs(r_to_d(d_to_r(d, p), p) - d) < 1e-12


def test_d_to_r_monotone_and_bounded():
    ds = np.linspace(-20, 20, 401)
    rs = [d_to_r(d, 0.3) for d in ds]
    assert np.all(np.diff(rs) > 0)
    assert max(abs(v) for v in rs) < 1


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_invalid_proportion(p):
    with pytest.raises(InvalidProportion):
        d_to_r(1.0, p)


def test_effect_size_identity_against_pearson():
    r = rng(9)
    for _ in range(20):
        t = r.binomial(1, r.uniform(0.2, 0.8), size=60)
        if t.min() == t.max():
            continue
        y = r.normal(size=60) + r.normal() * t
        assert abs(d_to_r(cohen_d(y, t), t.mean()) - pearson(y, t)) < 1e-8


# geometric mean


def test_geometric_mean_cases():
    assert geometric_mean([0.3] * 5) == pytest.approx(0.3, rel=1e-14)
    assert geometric_mean([0.04, 0.25]) == pytest.approx(0.1, rel=1e-14)
    v = rng(10).uniform(0.01, 1, size=5)
    assert abs(geometric_mean(v) - np.prod(v) ** (1 / 5)) < 1e-12


def test_geometric_mean_floors_zero_and_rejects_empty():
    assert geometric_mean([0.0, 1.0]) == pytest.approx(1e-150, rel=1e-10)
    with pytest.raises(EmptyList):
        geometric_mean([])
