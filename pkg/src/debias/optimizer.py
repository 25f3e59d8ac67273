"""Projected gradient ascent with Armijo backtracking on the weight simplex."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DebiasError
from .objective import Objective, ObjectiveBreakdown

log = logging.getLogger(__name__)

GRADIENT_ZERO = 1e-13


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 1000
    convergence_tol: float = 1e-6
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float = 1.0
    min_step: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("backtrack_factor must lie in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ValueError("armijo_c must lie in (0, 1)")
        if self.max_iterations < 1 or self.initial_step <= 0 or self.min_step <= 0:
            raise ValueError("max_iterations, initial_step and min_step must be positive")


@dataclass
class ScoreTrace:
    """Result of fitting one score.

    ``objective_history[t]`` is the objective after ``t`` accepted steps and
    ``directional_history[t]`` is g'(P(a + eta g) - a) for the step that
    produced ``objective_history[t + 1]``; together with ``step_history``
    they make every Armijo acceptance checkable after the fact.
    """

    alpha: np.ndarray
    iterations_used: int
    final_objective: ObjectiveBreakdown
    converged: bool
    step_history: list = field(default_factory=list)
    objective_history: list = field(default_factory=list)
    directional_history: list = field(default_factory=list)
    stalled: bool = False
    projection_collapses: int = 0
    iterates: list = field(default_factory=list, repr=False)  # not serialized

    def to_dict(self):
        return {
            "alpha": self.alpha.tolist(),
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "stalled": self.stalled,
            "projection_collapses": self.projection_collapses,
            "final_objective": self.final_objective.to_dict(),
            "step_history": list(self.step_history),
            "objective_history": list(self.objective_history),
            "directional_history": list(self.directional_history),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            alpha=np.asarray(d["alpha"], dtype=float),
            iterations_used=d["iterations_used"],
            final_objective=ObjectiveBreakdown.from_dict(d["final_objective"]),
            converged=d["converged"],
            step_history=list(d["step_history"]),
            objective_history=list(d["objective_history"]),
            directional_history=list(d["directional_history"]),
            stalled=d["stalled"],
            projection_collapses=d["projection_collapses"],
        )


def project(v):
    """Clip at zero and L1-normalize.

    Returns ``(alpha, collapsed)``; a vector with no positive entry maps to
    the uniform vector with ``collapsed=True``.
    """
    a = np.maximum(np.asarray(v, dtype=float), 0.0)
    total = a.sum()
    if not total > 0 or not np.isfinite(total):
        return np.full(a.shape, 1.0 / a.shape[0]), True
    return a / total, False


def fit_score(problem, lam, previous=(), config=None, main="correlation"):
    """Maximize the objective for one score by projected gradient ascent.

    A step is accepted when the projected displacement d = P(a + eta g) - a
    has g'd > 0 and the projected-arc Armijo condition
    f(a + d) >= f(a) + c g'd holds, so accepted steps strictly increase f.
    """
    config = config or OptimizerConfig()
    obj = Objective(problem, lam, previous, main)
    q = problem.q
    alpha = np.full(q, 1.0 / q)
    f = obj.value(alpha)
    trace = ScoreTrace(alpha, 0, None, False, objective_history=[f], iterates=[alpha])
    if q == 1:
        trace.converged = True
        trace.final_objective = obj.breakdown(alpha)
        return trace

    c, beta = config.armijo_c, config.backtrack_factor
    it = 0
    while it < config.max_iterations:
        g = obj.gradient(alpha)
        it += 1
        if np.max(np.abs(g)) <= GRADIENT_ZERO:
            trace.converged = True
            break
        eta = config.initial_step
        accepted = False
        while eta >= config.min_step:
            cand, collapsed = project(alpha + eta * g)
            fc = obj.value(cand)
            gd = float(g @ (cand - alpha))
            # gd <= 0 means the projected arc is not an ascent direction at this step
            if gd > 0 and fc >= f + c * gd:
                accepted = True
                break
            eta *= beta
        if not accepted:
            # no ascent along the projected arc down to min_step
            if not trace.step_history:
                trace.stalled = True
                log.warning("line search stalled on the first iteration (|g|=%.3g)", np.linalg.norm(g))
            else:
                trace.converged = True
            break
        trace.projection_collapses += collapsed
        trace.step_history.append(eta)
        trace.directional_history.append(gd)
        trace.objective_history.append(fc)
        trace.iterates.append(cand)
        delta = np.max(np.abs(cand - alpha))
        alpha, f = cand, fc
        if delta < config.convergence_tol:
            trace.converged = True
            break
    trace.alpha = alpha
    trace.iterations_used = it
    trace.final_objective = obj.breakdown(alpha)
    return trace


def fit_all(problem, lam, s, config=None, main="correlation"):
    """Extract ``s`` scores in sequence, each penalized against the earlier ones."""
    if not 1 <= s <= problem.q:
        raise ValueError(f"number of scores must be in [1, {problem.q}], got {s}")
    traces = []
    for k in range(s):
        try:
            tr = fit_score(problem, lam, [t.alpha for t in traces], config, main)
        except DebiasError as exc:
            raise type(exc)(f"score {k + 1}: {exc}") from exc
        traces.append(tr)
    return traces
