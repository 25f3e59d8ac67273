"""Synthetic longitudinal treatment data with an injected latent confounder.

A standard-normal confounder C is added to the latent propensities of the
historical treatment T_1 and the current treatment T_p, which are then
re-binarized at a threshold, and to a random subset of outcome items with
per-(item, time) weights. T_1 influences outcomes only through T_p.
Outcome items are generated with higher = improvement.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .data import LongitudinalDataset
from .errors import InvalidSpec, UnknownPreset

PANSS_ITEMS = [f"P{k}" for k in range(1, 8)] + [f"N{k}" for k in range(1, 8)] + [f"G{k}" for k in range(1, 17)]


@dataclass(frozen=True)
class SimulationSpec:
    n_subjects: int = 323
    q_items: int = 17
    m_timepoints: int = 8
    p_treatment_index: int = 2
    n_covariates: int = 2
    confounded_item_range: tuple = (5, 12)
    confounder_weight_range: tuple = (0.2, 1.0)
    binarize_threshold: float = 0.25
    # (q, m - p) effects of T_p on each item; None builds the default profile
    treatment_effect_profile: tuple | None = None
    # shift in the log-odds of T_p per standardized unit of T_1; T_1 reaches
    # outcomes only through this assignment dependence
    carryover: float = 1.0
    noise_sd: float = 1.0
    seed: int = 0
    t1_kind: str = "binary"
    effect_size: float = 0.5
    responsive_fraction: float = 0.5
    effect_decay: float = 0.6
    n_factors: int = 2
    factor_loading: float = 0.5
    covariate_effect: float = 0.2
    treatment_base_rate: float = 0.5
    confounder_in_treatment: float = 1.0
    resample_items_per_timepoint: bool = False
    item_names: tuple | None = None

    @property
    def n_outcome_timepoints(self):
        return self.m_timepoints - self.p_treatment_index

    def validate(self):
        problems = {}
        if self.n_subjects < 4:
            problems["n_subjects"] = "must be at least 4"
        if self.q_items < 1:
            problems["q_items"] = "must be positive"
        if self.p_treatment_index < 2:
            problems["p_treatment_index"] = "must be at least 2"
        if self.m_timepoints <= self.p_treatment_index:
            problems["m_timepoints"] = "must exceed p_treatment_index"
        if self.n_covariates < 0:
            problems["n_covariates"] = "must be non-negative"
        lo, hi = self.confounded_item_range
        if not 0 <= lo <= hi <= self.q_items:
            problems["confounded_item_range"] = f"need 0 <= low <= high <= q_items, got ({lo}, {hi})"
        wlo, whi = self.confounder_weight_range
        if not 0 <= wlo <= whi:
            problems["confounder_weight_range"] = f"need 0 <= low <= high, got ({wlo}, {whi})"
        # base propensities are 0/1 draws, so a threshold outside (0, 1)
        # would make the rebinarized treatment ignore its base assignment
        if not 0 < self.binarize_threshold < 1:
            problems["binarize_threshold"] = "must lie strictly between the base propensity levels 0 and 1"
        if self.noise_sd < 0:
            problems["noise_sd"] = "must be non-negative"
        if self.t1_kind not in ("binary", "count"):
            problems["t1_kind"] = "must be 'binary' or 'count'"
        if not 0 < self.treatment_base_rate < 1:
            problems["treatment_base_rate"] = "must lie in (0, 1)"
        if not 0 <= self.responsive_fraction <= 1:
            problems["responsive_fraction"] = "must lie in [0, 1]"
        if self.treatment_effect_profile is not None:
            prof = np.asarray(self.treatment_effect_profile, dtype=float)
            if prof.shape != (self.q_items, max(self.n_outcome_timepoints, 0)):
                problems["treatment_effect_profile"] = f"must have shape (q_items, m - p), got {prof.shape}"
        if self.item_names is not None and len(self.item_names) != self.q_items:
            problems["item_names"] = "length must equal q_items"
        if problems:
            raise InvalidSpec(problems)
        return self

    def to_dict(self):
        d = asdict(self)
        for key in ("confounded_item_range", "confounder_weight_range"):
            d[key] = list(d[key])
        if d["treatment_effect_profile"] is not None:
            d["treatment_effect_profile"] = np.asarray(d["treatment_effect_profile"]).tolist()
        if d["item_names"] is not None:
            d["item_names"] = list(d["item_names"])
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec({k: "unknown field" for k in sorted(unknown)})
        d = dict(d)
        for key in ("confounded_item_range", "confounder_weight_range", "item_names"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        if d.get("treatment_effect_profile") is not None:
            d["treatment_effect_profile"] = tuple(map(tuple, d["treatment_effect_profile"]))
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec({"spec": str(exc)}) from None


@dataclass
class GroundTruth:
    confounded_items: list  # per outcome time point, sorted 0-based item indices
    confounder_values: np.ndarray
    true_weights: np.ndarray
    time_points: list = field(default_factory=list)

    def confounded_union(self):
        return sorted(set().union(*map(set, self.confounded_items))) if self.confounded_items else []

    def to_dict(self):
        return {
            "schema_version": 1,
            "time_points": list(self.time_points),
            "confounded_items": [list(map(int, s)) for s in self.confounded_items],
            "confounder_values": self.confounder_values.tolist(),
            "true_weights": self.true_weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            confounded_items=[list(s) for s in d["confounded_items"]],
            confounder_values=np.asarray(d["confounder_values"], dtype=float),
            true_weights=np.asarray(d["true_weights"], dtype=float),
            time_points=list(d.get("time_points", [])),
        )

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def read(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def preset(name, **overrides):
    if name == "tads-like":
        spec = SimulationSpec(
            n_subjects=323, q_items=17, m_timepoints=8, p_treatment_index=2, n_covariates=2,
            confounded_item_range=(5, 12), t1_kind="binary",
        )
    elif name == "catie-like":
        # T_1, T_2, then quarterly visits at months 3..15
        spec = SimulationSpec(
            n_subjects=664, q_items=30, m_timepoints=7, p_treatment_index=2, n_covariates=2,
            confounded_item_range=(15, 25), t1_kind="count", item_names=tuple(PANSS_ITEMS),
        )
    else:
        raise UnknownPreset(f"unknown preset {name!r}; expected 'tads-like' or 'catie-like'")
    return replace(spec, **overrides)


def default_effect_profile(spec, rng):
    q, T = spec.q_items, spec.n_outcome_timepoints
    n_resp = int(round(spec.responsive_fraction * q))
    responsive = rng.permutation(q)[:n_resp]
    scale = np.zeros(q)
    scale[responsive] = spec.effect_size * rng.uniform(0.5, 1.5, size=n_resp)
    decay = 1.0 - spec.effect_decay * (np.arange(T) / max(T - 1, 1))
    return np.outer(scale, decay)


def _binarize_with_confounder(base_logit, C, spec, rng):
    """Draw 0/1 base assignments, add C, and threshold.

    If a draw leaves only one level (n >= 50), the intercept is nudged
    toward balance and the base assignment redrawn.
    """
    n = C.shape[0]
    shift = 0.0
    for _ in range(20):
        base = rng.binomial(1, expit(base_logit + shift))
        t = (base + spec.confounder_in_treatment * C > spec.binarize_threshold).astype(float)
        if n < 50 or 0 < t.sum() < n:
            return t
        shift += -1.0 if t.sum() == n else 1.0
    raise InvalidSpec({"binarize_threshold": "treatment has a single level after 20 redraws"})


def simulate(spec, force_current_treatment=None):
    """Generate ``(dataset, truth)``. Deterministic in ``spec.seed``.

    ``force_current_treatment`` pins T_p for every subject (used to check
    that T_1 has no direct path to the outcomes).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, q, p = spec.n_subjects, spec.q_items, spec.p_treatment_index
    T = spec.n_outcome_timepoints

    C = rng.standard_normal(n)
    X = np.empty((n, spec.n_covariates))
    cov_names = []
    for k in range(spec.n_covariates):
        if k == 1:
            X[:, k] = rng.binomial(1, 0.5, size=n)
            cov_names.append("sex")
        else:
            X[:, k] = rng.standard_normal(n)
            cov_names.append("age" if k == 0 else f"cov{k + 1}")
    x_lin = X @ rng.uniform(-0.5, 0.5, size=spec.n_covariates) if spec.n_covariates else np.zeros(n)

    treatments = np.empty((n, p))
    if spec.t1_kind == "count":
        latent = rng.standard_normal(n) + spec.confounder_in_treatment * C
        treatments[:, 0] = rng.poisson(np.exp(0.3 + 0.5 * latent))
    else:
        treatments[:, 0] = _binarize_with_confounder(x_lin, C, spec, rng)
    base_rate = np.log(spec.treatment_base_rate / (1 - spec.treatment_base_rate))
    for j in range(1, p):
        prev = treatments[:, j - 1]
        sd = prev.std()
        prev_std = (prev - prev.mean()) / sd if sd > 0 else np.zeros(n)
        treatments[:, j] = _binarize_with_confounder(base_rate + spec.carryover * prev_std + x_lin, C, spec, rng)
    if force_current_treatment is not None:
        treatments[:, -1] = float(force_current_treatment)
    tp = treatments[:, -1]

    if spec.treatment_effect_profile is None:
        effects = default_effect_profile(spec, rng)
    else:
        effects = np.asarray(spec.treatment_effect_profile, dtype=float)

    lo, hi = spec.confounded_item_range
    wlo, whi = spec.confounder_weight_range
    confounded, weights = [], np.zeros((T, q))
    shared = np.sort(rng.permutation(q)[: rng.integers(lo, hi + 1)])
    for t in range(T):
        items = np.sort(rng.permutation(q)[: rng.integers(lo, hi + 1)]) if spec.resample_items_per_timepoint else shared
        confounded.append(items.tolist())
        weights[t, items] = rng.uniform(wlo, whi, size=items.size)

    F = rng.standard_normal((n, spec.n_factors))
    loadings = spec.factor_loading * rng.uniform(0.5, 1.5, size=(q, spec.n_factors))
    beta_x = spec.covariate_effect * rng.standard_normal((spec.n_covariates, q))
    shared_part = F @ loadings.T + X @ beta_x
    outcomes = np.empty((T, n, q))
    for t in range(T):
        growth = 0.5 + 0.5 * (t + 1) / T
        noise = spec.noise_sd * rng.standard_normal((n, q))
        outcomes[t] = growth * shared_part + np.outer(tp, effects[:, t]) + np.outer(C, weights[t]) + noise

    dataset = LongitudinalDataset(
        treatments=treatments,
        outcomes=outcomes,
        covariates=X,
        item_names=list(spec.item_names) if spec.item_names else None,
        covariate_names=cov_names,
        subject_ids=np.array([f"s{k + 1:05d}" for k in range(n)]),
    )
    mean_effect = np.maximum(effects.mean(axis=1), 0.0)
    true_w = mean_effect / mean_effect.sum() if mean_effect.sum() > 0 else mean_effect
    truth = GroundTruth(confounded, C, true_w, dataset.time_points)
    return dataset, truth
