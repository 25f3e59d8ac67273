"""Cross-validated choice of the confounding penalty weight.

Each candidate lambda is scored by the held-out main correlation summed over
scores and time points. It is admissible only if the geometric mean, over
scores x folds, of the smallest held-out confounding-test p-value exceeds
``gamma``.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import AllAbstained, FoldDegeneracy, InsufficientSamples
from .objective import prepare
from .optimizer import OptimizerConfig, ScoreTrace, fit_all
from .stats import geometric_mean

FOLD_REDRAWS = 20


@dataclass(frozen=True)
class SelectionConfig:
    lambda_grid: tuple = tuple(float(v) for v in range(11))
    folds: int = 5
    gamma: float = 0.05
    scores: int = 3
    mode: str = "abstain"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        if not self.lambda_grid or min(self.lambda_grid) < 0:
            raise ValueError("lambda_grid must be non-empty and non-negative")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.scores < 1:
            raise ValueError("scores must be positive")
        if self.mode not in ("abstain", "closest-below"):
            raise ValueError("mode must be 'abstain' or 'closest-below'")


def make_folds(n, folds, seed, treatment=None):
    """Fold label per subject; sizes differ by at most one.

    A binary treatment is stratified on: subjects are dealt round-robin,
    one level after the other, so each level is spread evenly as well.
    """
    if not 1 <= folds <= n:
        raise ValueError(f"folds must lie in [1, n={n}]")
    rng = np.random.default_rng(seed)
    if treatment is not None:
        levels = np.unique(treatment)
        if levels.size == 2:
            order = np.concatenate([rng.permutation(np.flatnonzero(treatment == v)) for v in levels])
        else:
            order = rng.permutation(n)
    else:
        order = rng.permutation(n)
    relabel = rng.permutation(folds)
    labels = np.empty(n, dtype=int)
    labels[order] = relabel[np.arange(n) % folds]
    return labels


def _degenerate_split(tp, labels, folds):
    for f in range(folds):
        test = labels == f
        if np.ptp(tp[test]) == 0 or np.ptp(tp[~test]) == 0:
            return True
    return False


def heldout_metrics(problem, alphas):
    """Held-out main-correlation sum and per-score minimum confounding p-value."""
    corr = sum(float(problem.main_correlations(a).sum()) for a in alphas)
    minp = [float(problem.confounding_pvalues(a).min()) if problem.n_history else 1.0 for a in alphas]
    return corr, minp


@dataclass
class FitResult:
    """Scores fitted on a full dataset at one lambda, with diagnostics."""

    weights: np.ndarray  # (s, q)
    item_names: list
    chosen_lambda: float
    traces: list
    main_correlations: np.ndarray  # (s, T)
    main_pvalues: np.ndarray  # (s, T)
    confounding_correlations: np.ndarray  # (s, T, J)
    confounding_pvalues: np.ndarray  # (s, T, J)
    time_points: list
    main_term: str = "correlation"

    def to_dict(self):
        return {
            "item_names": list(self.item_names),
            "chosen_lambda": self.chosen_lambda,
            "main_term": self.main_term,
            "time_points": list(self.time_points),
            "scores": [
                {
                    "weights": dict(zip(self.item_names, w.tolist())),
                    "main_correlations": self.main_correlations[k].tolist(),
                    "main_pvalues": self.main_pvalues[k].tolist(),
                    "confounding_correlations": self.confounding_correlations[k].tolist(),
                    "confounding_pvalues": self.confounding_pvalues[k].tolist(),
                    "trace": self.traces[k].to_dict(),
                }
                for k, w in enumerate(self.weights)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        scores = d["scores"]
        items = list(d["item_names"])
        return cls(
            weights=np.array([[s["weights"][i] for i in items] for s in scores], dtype=float),
            item_names=items,
            chosen_lambda=d["chosen_lambda"],
            traces=[ScoreTrace.from_dict(s["trace"]) for s in scores],
            main_correlations=np.array([s["main_correlations"] for s in scores], dtype=float),
            main_pvalues=np.array([s["main_pvalues"] for s in scores], dtype=float),
            confounding_correlations=np.array([s["confounding_correlations"] for s in scores], dtype=float),
            confounding_pvalues=np.array([s["confounding_pvalues"] for s in scores], dtype=float),
            time_points=list(d["time_points"]),
            main_term=d.get("main_term", "correlation"),
        )


def fit_final(dataset, lam, s, opt=None, main="correlation", problem=None):
    problem = problem or prepare(dataset)
    traces = fit_all(problem, lam, s, opt, main)
    alphas = [t.alpha for t in traces]
    return FitResult(
        weights=np.stack(alphas),
        item_names=list(dataset.item_names),
        chosen_lambda=float(lam),
        traces=traces,
        main_correlations=np.stack([problem.main_correlations(a) for a in alphas]),
        main_pvalues=np.stack([problem.main_pvalues(a) for a in alphas]),
        confounding_correlations=np.stack([problem.confounding_correlations(a) for a in alphas]),
        confounding_pvalues=np.stack([problem.confounding_pvalues(a) for a in alphas]),
        time_points=dataset.time_points,
        main_term=main,
    )


@dataclass
class LambdaRow:
    lam: float
    heldout_correlation: float  # mean over folds of the per-fold sum
    fold_correlations: list
    min_pvalues: list  # [score][fold]
    aggregate_pvalue: float
    passed: bool

    def to_dict(self):
        return {
            "lambda": self.lam,
            "heldout_correlation": self.heldout_correlation,
            "fold_correlations": list(self.fold_correlations),
            "min_pvalues": [list(r) for r in self.min_pvalues],
            "aggregate_pvalue": self.aggregate_pvalue,
            "passed": self.passed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["lambda"], d["heldout_correlation"], list(d["fold_correlations"]),
                   [list(r) for r in d["min_pvalues"]], d["aggregate_pvalue"], d["passed"])


@dataclass
class SelectionResult:
    chosen_lambda: float | None  # None when abstained
    per_lambda: list = field(default_factory=list)
    final_fit: FitResult | None = None
    mode: str = "abstain"
    gamma: float = 0.05
    fold_labels: np.ndarray | None = None

    @property
    def abstained(self):
        return self.chosen_lambda is None

    def require_fit(self):
        if self.abstained:
            raise AllAbstained("no lambda satisfied the confounding constraint", selection=self)
        return self.final_fit

    def to_dict(self):
        return {
            "chosen_lambda": self.chosen_lambda,
            "abstained": self.abstained,
            "mode": self.mode,
            "gamma": self.gamma,
            "per_lambda": [r.to_dict() for r in self.per_lambda],
            "final_fit": self.final_fit.to_dict() if self.final_fit else None,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            chosen_lambda=d["chosen_lambda"],
            per_lambda=[LambdaRow.from_dict(r) for r in d["per_lambda"]],
            final_fit=FitResult.from_dict(d["final_fit"]) if d["final_fit"] else None,
            mode=d["mode"],
            gamma=d["gamma"],
        )


def choose_lambda(rows, gamma, mode):
    """Pick from the per-lambda table; ties go to the larger lambda."""
    passing = [r for r in rows if r.aggregate_pvalue > gamma]
    if passing:
        return max(passing, key=lambda r: (r.heldout_correlation, r.lam)).lam
    if mode == "closest-below":
        return max(rows, key=lambda r: (r.aggregate_pvalue, r.lam)).lam
    return None


def _fold_task(args):
    dataset, train, test, lambdas, s, opt, main = args
    train_problem = prepare(dataset.subset(train))
    test_problem = prepare(dataset.subset(test))
    out = []
    for lam in lambdas:
        traces = fit_all(train_problem, lam, s, opt, main)
        out.append(heldout_metrics(test_problem, [t.alpha for t in traces]))
    return out


def cross_validate(dataset, sel=None, opt=None, main="correlation", n_jobs=1, refit=True):
    """Score every lambda by k-fold CV, choose one, and refit on all data."""
    sel = sel or SelectionConfig()
    opt = opt or OptimizerConfig()
    n, r = dataset.n, dataset.covariates.shape[1]
    if sel.folds > n or n < sel.folds * (r + 4):
        raise InsufficientSamples(f"n={n} too small for {sel.folds} folds with {r} covariates")
    tp = dataset.current_treatment
    for attempt in range(FOLD_REDRAWS):
        labels = make_folds(n, sel.folds, sel.seed + attempt, tp)
        if not _degenerate_split(tp, labels, sel.folds):
            break
    else:
        raise FoldDegeneracy(f"no fold split with treatment variation after {FOLD_REDRAWS} draws")

    lambdas = sorted(set(sel.lambda_grid))
    tasks = [(dataset, np.flatnonzero(labels != f), np.flatnonzero(labels == f), lambdas,
              sel.scores, opt, main) for f in range(sel.folds)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            per_fold = list(ex.map(_fold_task, tasks))
    else:
        per_fold = [_fold_task(t) for t in tasks]

    by_lam = {}
    for li, lam in enumerate(lambdas):
        corr = [per_fold[f][li][0] for f in range(sel.folds)]
        minp = [[per_fold[f][li][1][k] for f in range(sel.folds)] for k in range(sel.scores)]
        agg = geometric_mean(np.ravel(minp))
        by_lam[lam] = LambdaRow(lam, math.fsum(corr) / sel.folds, corr, minp, agg, agg > sel.gamma)
    rows = [by_lam[lam] for lam in sel.lambda_grid]

    chosen = choose_lambda(rows, sel.gamma, sel.mode)
    result = SelectionResult(chosen, rows, None, sel.mode, sel.gamma, labels)
    if chosen is not None and refit:
        result.final_fit = fit_final(dataset, chosen, sel.scores, opt, main)
    return result
