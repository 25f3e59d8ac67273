"""Bootstrap evaluation of the full method against its ablations.

Each replicate draws n subjects with replacement; the distinct drawn
subjects form the training set and the never-drawn ones (about 36.8%) the
test set. Every method runs its whole pipeline on the training set and is
scored only on the test set.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import DebiasError, IndexOutOfRange
from .objective import prepare
from .optimizer import OptimizerConfig, fit_score
from .selection import SelectionConfig, cross_validate, fit_final

log = logging.getLogger(__name__)

METHODS = ("debias", "no-conf", "no-corr", "no-corr-no-conf")
METRICS = ("correlation", "confounding_p_min", "confounding_p_mean", "confounded_sum")
REDRAWS = 20


@dataclass(frozen=True)
class Method:
    name: str
    label: str | None = None
    overrides: tuple = ()  # (field, value) pairs applied to the SelectionConfig

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}; expected one of {METHODS}")
        if self.label is None:
            object.__setattr__(self, "label", self.name)

    @property
    def main_term(self):
        return "mse" if self.name.startswith("no-corr") else "correlation"

    def selection(self, sel):
        sel = replace(sel, **dict(self.overrides))
        if self.name.endswith("no-conf"):
            sel = replace(sel, lambda_grid=(0.0,))
        return sel


def default_methods():
    return [Method(name) for name in METHODS]


def mse_objective_variant(problem, lam, previous=(), config=None):
    """Fit one score with the main correlation swapped for negative MSE."""
    return fit_score(problem, lam, previous, config, main="mse")


def sum_confounded_coefficients(alpha, truth):
    """Total weight on items confounded at any time point."""
    alpha = np.asarray(alpha, dtype=float)
    idx = truth.confounded_union()
    if any(i < 0 or i >= alpha.shape[0] for i in idx):
        raise IndexOutOfRange(f"confounded item index out of range for q={alpha.shape[0]}")
    return float(alpha[idx].sum()) if idx else 0.0


@dataclass(frozen=True)
class PairedTest:
    statistic: float
    p_value: float
    df: int
    zero_variance: bool = False


def paired_t_test(a, b, alternative="two-sided"):
    """Paired t-test on ``a - b`` with ``len - 1`` degrees of freedom.

    Constant differences give ``p_value=1`` flagged ``zero_variance``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired samples must be equal-length vectors with at least 2 entries")
    d = a - b
    n = d.size
    sd = d.std(ddof=1)
    if not sd > 0:
        return PairedTest(0.0, 1.0, n - 1, zero_variance=True)
    t = d.mean() / (sd / np.sqrt(n))
    if alternative == "two-sided":
        p = 2 * stats.t.sf(abs(t), n - 1)
    elif alternative == "greater":
        p = stats.t.sf(t, n - 1)
    elif alternative == "less":
        p = stats.t.cdf(t, n - 1)
    else:
        raise ValueError(f"unknown alternative {alternative!r}")
    return PairedTest(float(t), float(min(p, 1.0)), n - 1)


def bootstrap_split(n, rng):
    draw = rng.integers(0, n, size=n)
    in_train = np.zeros(n, dtype=bool)
    in_train[draw] = True
    return np.flatnonzero(in_train), np.flatnonzero(~in_train)


@dataclass
class MethodOutcome:
    correlations: np.ndarray  # (s, T) held-out main partial correlation
    confounding_pvalues: np.ndarray  # (s, T, J)
    confounded_sum: np.ndarray  # (s,)
    chosen_lambda: float
    fit_seconds: float

    @property
    def p_min(self):
        return self.confounding_pvalues.reshape(self.confounding_pvalues.shape[0], -1).min(axis=1)

    @property
    def p_mean(self):
        return self.confounding_pvalues.reshape(self.confounding_pvalues.shape[0], -1).mean(axis=1)


@dataclass
class ReplicateResult:
    replicate_id: int
    train_index: np.ndarray
    test_index: np.ndarray
    outcomes: dict = field(default_factory=dict)  # label -> MethodOutcome
    skipped: bool = False

    @property
    def test_fraction(self):
        return self.test_index.size / (self.test_index.size + self.train_index.size)


def _run_method(method, train, test_problem, truth, sel, opt, rep_seed):
    msel = replace(method.selection(sel), seed=rep_seed)
    t0 = time.perf_counter()
    if len(set(msel.lambda_grid)) == 1:
        # a one-point grid needs no cross-validation in closest-below mode
        fit = fit_final(train, msel.lambda_grid[0], msel.scores, opt, method.main_term)
    else:
        fit = cross_validate(train, msel, opt, method.main_term).require_fit()
    elapsed = time.perf_counter() - t0
    corr = np.stack([test_problem.main_correlations(a) for a in fit.weights])
    pvals = np.stack([test_problem.confounding_pvalues(a) for a in fit.weights])
    csum = np.array([sum_confounded_coefficients(a, truth) for a in fit.weights])
    return MethodOutcome(corr, pvals, csum, fit.chosen_lambda, elapsed)


def run_replicate(args):
    rep_id, dataset, truth, methods, sel, opt, seed = args
    rng = np.random.default_rng(seed)
    n = dataset.n
    tp = dataset.current_treatment
    for _ in range(REDRAWS):
        train_idx, test_idx = bootstrap_split(n, rng)
        if np.ptp(tp[test_idx]) == 0 or np.ptp(tp[train_idx]) == 0:
            continue
        rep_seed = int(rng.integers(2**31))
        try:
            test_problem = prepare(dataset.subset(test_idx))
            train = dataset.subset(train_idx)
            outcomes = {m.label: _run_method(m, train, test_problem, truth, sel, opt, rep_seed) for m in methods}
        except DebiasError as exc:
            log.info("replicate %d: redrawing after %s", rep_id, exc)
            continue
        return ReplicateResult(rep_id, train_idx, test_idx, outcomes)
    log.warning("replicate %d skipped after %d degenerate resamples", rep_id, REDRAWS)
    return ReplicateResult(rep_id, np.array([], int), np.array([], int), skipped=True)


def _summary(values):
    v = np.asarray(values, dtype=float)
    mean = v.mean(axis=0)
    se = v.std(axis=0, ddof=1) / np.sqrt(v.shape[0]) if v.shape[0] > 1 else np.zeros_like(mean)
    return {"mean": mean.tolist(), "ci_low": (mean - 1.96 * se).tolist(), "ci_high": (mean + 1.96 * se).tolist()}


@dataclass
class EvaluationReport:
    methods: list
    replicates: list  # ReplicateResult, sorted by id, skipped excluded
    n_skipped: int
    time_points: list
    summary: dict
    tests: dict
    bonferroni_threshold: float | None

    def metric(self, label, name, score=0):
        """Per-replicate values of a metric for one method (first score by default).

        ``correlation`` returns an (R, T) array, the rest an (R,) array.
        """
        out = []
        for rep in self.replicates:
            mo = rep.outcomes[label]
            if name == "correlation":
                out.append(mo.correlations[score])
            elif name == "confounding_p_min":
                out.append(mo.p_min[score])
            elif name == "confounding_p_mean":
                out.append(mo.p_mean[score])
            elif name == "confounded_sum":
                out.append(mo.confounded_sum[score])
            elif name == "fit_seconds":
                out.append(mo.fit_seconds)
            elif name == "chosen_lambda":
                out.append(mo.chosen_lambda)
            else:
                raise KeyError(name)
        return np.asarray(out, dtype=float)

    def to_dict(self):
        return {
            "schema_version": 1,
            "methods": self.methods,
            "replicates": len(self.replicates),
            "skipped_replicates": self.n_skipped,
            "time_points": self.time_points,
            "bonferroni_threshold": self.bonferroni_threshold,
            "summary": self.summary,
            "paired_tests": self.tests,
            "mean_test_fraction": float(np.mean([r.test_fraction for r in self.replicates])) if self.replicates else None,
        }

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def tidy_rows(self):
        """One row per replicate x method x time point x metric, first score only."""
        for rep in self.replicates:
            for label in self.methods:
                mo = rep.outcomes[label]
                for t, tpnt in enumerate(self.time_points):
                    yield rep.replicate_id, label, tpnt, "correlation", float(mo.correlations[0, t])
                    yield rep.replicate_id, label, tpnt, "confounding_p", float(mo.confounding_pvalues[0, t].min())
                yield rep.replicate_id, label, "", "confounding_p_min", float(mo.p_min[0])
                yield rep.replicate_id, label, "", "confounding_p_mean", float(mo.p_mean[0])
                yield rep.replicate_id, label, "", "confounded_sum", float(mo.confounded_sum[0])
                yield rep.replicate_id, label, "", "chosen_lambda", float(mo.chosen_lambda)
                yield rep.replicate_id, label, "", "fit_seconds", float(mo.fit_seconds)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "method", "time_point", "metric", "value"])
            for row in self.tidy_rows():
                w.writerow([row[0], row[1], row[2], row[3], repr(row[4])])


def summarize(methods, replicates, n_skipped, time_points):
    labels = [m.label for m in methods]
    report = EvaluationReport(labels, replicates, n_skipped, list(time_points), {}, {}, None)
    if not replicates:
        return report
    s = next(iter(replicates[0].outcomes.values())).correlations.shape[0]
    for label in labels:
        entry = {}
        for k in range(s):
            entry[f"score_{k + 1}"] = {name: _summary(report.metric(label, name, k)) for name in METRICS}
        entry["fit_seconds"] = _summary(report.metric(label, "fit_seconds"))
        entry["chosen_lambda"] = _summary(report.metric(label, "chosen_lambda"))
        report.summary[label] = entry
    if len(labels) > 1 and len(replicates) > 1:
        base = labels[0]
        report.bonferroni_threshold = 0.05 / (len(labels) - 1)
        for other in labels[1:]:
            res = {}
            for name in METRICS:
                a, b = report.metric(base, name), report.metric(other, name)
                if name == "correlation":
                    res[name] = [paired_t_test(a[:, t], b[:, t]).p_value for t in range(a.shape[1])]
                    res["correlation_time_mean"] = paired_t_test(a.mean(axis=1), b.mean(axis=1)).p_value
                else:
                    res[name] = paired_t_test(a, b).p_value
            report.tests[f"{base} vs {other}"] = res
    return report


def bootstrap_evaluate(dataset, truth, methods=None, replicates=1000, sel=None, opt=None, seed=0, n_jobs=1):
    """Run the bootstrap protocol and aggregate per-method metrics."""
    methods = list(methods or default_methods())
    if replicates < 2:
        raise ValueError("need at least 2 replicates")
    if not methods:
        raise ValueError("need at least one method")
    if len({m.label for m in methods}) != len(methods):
        methods = [replace(m, label=f"{m.label}#{k + 1}") for k, m in enumerate(methods)]
    sel = replace(sel or SelectionConfig(), mode="closest-below")
    opt = opt or OptimizerConfig()
    seeds = np.random.SeedSequence(seed).generate_state(replicates)
    tasks = [(r, dataset, truth, methods, sel, opt, int(seeds[r])) for r in range(replicates)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(run_replicate, tasks, chunksize=max(1, replicates // (4 * n_jobs))))
    else:
        results = [run_replicate(t) for t in tasks]
    results.sort(key=lambda r: r.replicate_id)
    kept = [r for r in results if not r.skipped]
    return summarize(methods, kept, len(results) - len(kept), dataset.time_points)
