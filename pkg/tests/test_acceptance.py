"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS|FAIL`` line; the lines are repeated
in the pytest terminal summary.
"""

import math
import os
import time

import numpy as np
import pytest

from debias import cli
from debias.data import read_csv
from debias.evaluation import bootstrap_evaluate, bootstrap_split, default_methods, paired_t_test
from debias.objective import Objective, evaluate, prepare
from debias.optimizer import OptimizerConfig, fit_all, fit_score, project
from debias.selection import SelectionConfig, cross_validate
from debias.simulate import preset, simulate
from debias.stats import cohen_d, d_to_r, pearson

from conftest import record
from helpers import finite_difference, oracle_objective, planted_dataset, random_dataset

pytestmark = pytest.mark.acceptance
CORES = os.cpu_count() or 1


def test_criterion_01_gradient_matches_finite_differences():
    t0 = time.perf_counter()
    P = prepare(random_dataset(n=60, q=8, m=5, p=2, seed=101))
    rng = np.random.default_rng(101)
    previous = [rng.dirichlet(np.ones(8)) for _ in range(2)]  # K = 3
    obj = Objective(P, 2.0, previous)
    worst = 0.0
    for _ in range(20):
        a = rng.dirichlet(np.ones(8))
        fd = finite_difference(obj.value, a)
        worst = max(worst, float(np.linalg.norm(obj.gradient(a) - fd) / np.linalg.norm(fd)))
    elapsed = time.perf_counter() - t0
    ok = record(1, worst < 1e-4 and elapsed < 5, f"max relative error {worst:.2e} (< 1e-4), {elapsed:.2f}s (< 5s)")
    assert ok


def test_criterion_02_objective_matches_uncached_oracle():
    worst = 0.0
    for k in range(10):
        rng = np.random.default_rng(200 + k)
        p = int(rng.integers(2, 4))
        q = int(rng.integers(2, 9))
        ds = random_dataset(n=int(rng.integers(30, 90)), q=q, m=p + int(rng.integers(1, 4)), p=p, seed=200 + k)
        prev = [rng.dirichlet(np.ones(q)) for _ in range(int(rng.integers(0, 3)))]
        a, lam = rng.dirichlet(np.ones(q)), float(rng.uniform(0, 10))
        worst = max(worst, abs(evaluate(prepare(ds), a, lam, prev).total - oracle_objective(ds, a, lam, prev)))
    assert record(2, worst < 1e-8, f"max |cached - oracle| {worst:.2e} over 10 instances (< 1e-8)")


def test_criterion_03_optimizer_monotone_armijo_feasible():
    cfg = OptimizerConfig()
    fits = accepted = 0
    violations = []
    seed = 300
    while fits < 100:
        rng = np.random.default_rng(seed)
        q = int(rng.integers(3, 11))
        p = int(rng.integers(2, 4))
        ds = random_dataset(n=int(rng.integers(40, 121)), q=q, m=p + int(rng.integers(1, 4)), p=p, seed=seed)
        P, lam = prepare(ds), float(rng.uniform(0, 10))
        traces = fit_all(P, lam, int(rng.integers(1, min(q, 3) + 1)), cfg)
        for k, tr in enumerate(traces):
            obj = Objective(P, lam, [t.alpha for t in traces[:k]])
            f = tr.objective_history
            for t, (eta, gd) in enumerate(zip(tr.step_history, tr.directional_history)):
                a, b = tr.iterates[t], tr.iterates[t + 1]
                g = obj.gradient(a)
                cand, _ = project(a + eta * g)
                gd_check = float(g @ (b - a))
                if not (np.allclose(cand, b, atol=1e-15) and gd_check > 0
                        and f[t + 1] >= f[t] + cfg.armijo_c * gd_check - 1e-12 and f[t + 1] >= f[t] - 1e-12
                        and abs(obj.value(b) - f[t + 1]) < 1e-12):
                    violations.append((seed, k, t))
                accepted += 1
            for a in tr.iterates:
                if a.min() < 0 or abs(a.sum() - 1) >= 1e-10:
                    violations.append((seed, k, "infeasible"))
            fits += 1
        seed += 1
    assert record(3, not violations, f"{fits} fits, {accepted} accepted steps, {len(violations)} violations")


def test_criterion_04_planted_signal_recovery():
    t0 = time.perf_counter()
    hits = 0
    for seed in range(100):
        P = prepare(planted_dataset(n=200, q=10, noise_sd=1.0, seed=seed))
        hits += fit_score(P, 0.0).alpha[0] > 0.9
    elapsed = time.perf_counter() - t0
    assert record(4, hits >= 95 and elapsed < 30, f"{hits}/100 seeds put > 0.9 mass on the planted item, {elapsed:.1f}s")


@pytest.fixture(scope="module")
def tads_report():
    ds, truth = simulate(preset("tads-like", seed=0))
    t0 = time.perf_counter()
    report = bootstrap_evaluate(ds, truth, default_methods(), replicates=200, sel=SelectionConfig(),
                                seed=0, n_jobs=CORES)
    return report, time.perf_counter() - t0


def test_criterion_05_confounded_weight_below_unpenalized(tads_report):
    report, elapsed = tads_report
    a, b = report.metric("debias", "confounded_sum"), report.metric("no-conf", "confounded_sum")
    p = paired_t_test(a, b).p_value
    ok = a.mean() < b.mean() and p < 0.05 / 3
    assert record(5, ok, f"confounded sum {a.mean():.4f} vs {b.mean():.4f}, paired p {p:.2e} (< {0.05 / 3:.4f}); "
                         f"{len(report.replicates)} replicates, {report.n_skipped} skipped, {elapsed:.0f}s on {CORES} core(s)")


def test_criterion_06_confounding_pvalue_above_unpenalized(tads_report):
    report, _ = tads_report
    a, b = report.metric("debias", "confounding_p_mean"), report.metric("no-conf", "confounding_p_mean")
    p = paired_t_test(a, b).p_value
    amin, bmin = report.metric("debias", "confounding_p_min"), report.metric("no-conf", "confounding_p_min")
    pmin = paired_t_test(amin, bmin).p_value
    ok = a.mean() > b.mean() and p < 0.05 / 3
    assert record(6, ok, f"mean p-value {a.mean():.4f} vs {b.mean():.4f}, paired p {p:.2e}; "
                         f"(min p-value {amin.mean():.4f} vs {bmin.mean():.4f}, paired p {pmin:.2e})")


def test_criterion_07_correlation_non_inferiority(tads_report):
    report, _ = tads_report
    early = slice(0, math.ceil(len(report.time_points) / 2))
    deb = report.metric("debias", "correlation")[:, early].mean(axis=1)
    mse = report.metric("no-corr", "correlation")[:, early].mean(axis=1)
    unpen = report.metric("no-conf", "correlation")[:, early].mean(axis=1)
    p = paired_t_test(deb, mse, alternative="greater").p_value
    gap = abs(deb.mean() - unpen.mean())
    ok = deb.mean() >= mse.mean() and p < 0.05 and gap < 0.05
    assert record(7, ok, f"early correlation {deb.mean():.4f} vs MSE {mse.mean():.4f} (one-sided p {p:.2e}); "
                         f"|gap to lambda=0| {gap:.4f} (< 0.05)")


def test_criterion_08_null_calibration():
    corr, rejections, tests = [], 0, 0
    for seed in range(100):
        spec = preset("tads-like", seed=seed, n_subjects=300, effect_size=0.0,
                      confounded_item_range=(0, 0), confounder_weight_range=(0.0, 0.0))
        ds, _ = simulate(spec)
        rng = np.random.default_rng(seed)
        train, test = bootstrap_split(ds.n, rng)
        fit = cross_validate(ds.subset(train), SelectionConfig(mode="closest-below", seed=seed)).require_fit()
        held = prepare(ds.subset(test))
        alpha = fit.weights[0]
        corr.append(held.main_correlations(alpha).mean())
        pv = held.confounding_pvalues(alpha)
        rejections += int((pv < 0.05).sum())
        tests += pv.size
    mean_corr, rate = float(np.mean(corr)), rejections / tests
    ok = -0.05 < mean_corr < 0.05 and 0.02 < rate < 0.10
    assert record(8, ok, f"mean held-out correlation {mean_corr:+.4f}, rejection rate {rate:.3f} over {tests} tests")


def test_criterion_09_bootstrap_fraction():
    rng = np.random.default_rng(9)
    n = 323
    train = np.array([bootstrap_split(n, rng)[0].size / n for _ in range(1000)])
    ok = abs(train.mean() - 0.632) < 0.02
    assert record(9, ok, f"distinct-draw (training) fraction {train.mean():.4f}, "
                         f"never-drawn (test) fraction {1 - train.mean():.4f}")


def test_criterion_10_effect_size_identity():
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(10, 500))
        t = rng.binomial(1, rng.uniform(0.1, 0.9), n)
        if t.min() == t.max():
            t[0] = 1 - t[0]
        y = rng.normal(size=n) * rng.uniform(0.1, 5) + rng.normal() * t
        worst = max(worst, abs(d_to_r(cohen_d(y, t), t.mean()) - pearson(y, t)))
    assert record(10, worst < 1e-8, f"max |d_to_r(d) - r| {worst:.2e} over 100 instances")


def test_criterion_11_scaling_in_subjects():
    times = {}
    for n in (250, 500, 1000, 2000):
        ds, _ = simulate(preset("tads-like", seed=11, n_subjects=n, q_items=20, m_timepoints=6))
        t0 = time.perf_counter()
        cross_validate(ds, SelectionConfig(scores=3, mode="closest-below"))
        times[n] = time.perf_counter() - t0
    ratio = times[2000] / times[250]
    detail = ", ".join(f"n={n}: {t:.2f}s" for n, t in times.items())
    assert record(11, ratio < 12, f"time(2000)/time(250) = {ratio:.2f} (< 12); {detail}")


def test_criterion_12_catie_end_to_end(tmp_path):
    t0 = time.perf_counter()
    assert cli.main(["simulate", "--preset", "catie-like", "--seed", "12", "--out", str(tmp_path / "catie")]) == 0
    code = cli.main(["fit", str(tmp_path / "catie_data.csv"), "--folds", "5", "--threads", str(CORES),
                     "--mode", "closest-below", "--out", str(tmp_path / "fit.json")])
    elapsed = time.perf_counter() - t0
    ds = read_csv(tmp_path / "catie_data.csv")
    ok = code == 0 and elapsed < 300 and ds.n == 664 and ds.q == 30
    assert record(12, ok, f"simulate + fit (11 lambdas x 5 folds x 3 scores) in {elapsed:.1f}s on {CORES} core(s), exit {code}")
