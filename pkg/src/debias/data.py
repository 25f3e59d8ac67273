"""Longitudinal dataset container and its CSV schema.

Columns are ``subject_id``, ``t1``..``t<p>`` (treatments in time order),
``x_<name>`` (covariates) and ``y<i>_<item>`` (outcome item ``item`` at time
point ``i``, with ``i`` running contiguously from ``p + 1`` to ``m``).
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MIN_SUBJECTS = 20

_T_COL = re.compile(r"^t(\d+)$")
_X_COL = re.compile(r"^x_(.+)$")
_Y_COL = re.compile(r"^y(\d+)_(.+)$")


@dataclass
class LongitudinalDataset:
    """Subjects x (treatments, covariates, outcome items per time point).

    ``treatments[:, j]`` is treatment T_{j+1}; the last column is the
    treatment of interest. ``outcomes[t]`` is the ``(n, q)`` item matrix for
    time point ``p + 1 + t``. Outcomes are stored with higher = improvement.
    """

    treatments: np.ndarray
    outcomes: np.ndarray
    covariates: np.ndarray | None = None
    item_names: list[str] | None = None
    covariate_names: list[str] | None = None
    subject_ids: np.ndarray | None = None
    orientation: str = field(default="improvement")

    def __post_init__(self):
        self.treatments = np.asarray(self.treatments, dtype=float)
        if self.treatments.ndim != 2:
            raise ValidationError("treatments must be an (n, p) array")
        n, p = self.treatments.shape
        if p < 2:
            raise ValidationError(f"need at least two treatment time points, got p={p}")
        self.outcomes = np.asarray(self.outcomes, dtype=float)
        if self.outcomes.ndim == 2:
            self.outcomes = self.outcomes[None]
        if self.outcomes.ndim != 3 or self.outcomes.shape[1] != n:
            raise ValidationError("outcomes must be a (time points, n, q) array")
        if self.outcomes.shape[0] < 1:
            raise ValidationError("need at least one outcome time point after the treatment")
        if self.covariates is None:
            self.covariates = np.empty((n, 0))
        self.covariates = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        q, r = self.outcomes.shape[2], self.covariates.shape[1]
        if self.item_names is None:
            self.item_names = [f"item{k + 1:02d}" for k in range(q)]
        if self.covariate_names is None:
            self.covariate_names = [f"x{k + 1}" for k in range(r)]
        if len(self.item_names) != q or len(self.covariate_names) != r:
            raise ValidationError("name lists do not match array shapes")
        if self.subject_ids is None:
            self.subject_ids = np.array([str(k + 1) for k in range(n)])
        self.subject_ids = np.asarray(self.subject_ids).astype(str)
        if self.orientation not in ("improvement", "severity"):
            raise ValidationError(f"unknown orientation {self.orientation!r}")
        if self.orientation == "severity":
            self.outcomes = -self.outcomes
            self.orientation = "improvement"
        for name, arr in (("treatments", self.treatments), ("covariates", self.covariates),
                          ("outcomes", self.outcomes)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} contain non-finite values")

    @property
    def n(self):
        return self.treatments.shape[0]

    @property
    def p(self):
        return self.treatments.shape[1]

    @property
    def q(self):
        return self.outcomes.shape[2]

    @property
    def m(self):
        return self.p + self.outcomes.shape[0]

    @property
    def time_points(self):
        return list(range(self.p + 1, self.m + 1))

    @property
    def current_treatment(self):
        return self.treatments[:, -1]

    def subset(self, rows):
        rows = np.asarray(rows)
        return LongitudinalDataset(
            treatments=self.treatments[rows],
            outcomes=self.outcomes[:, rows],
            covariates=self.covariates[rows],
            item_names=list(self.item_names),
            covariate_names=list(self.covariate_names),
            subject_ids=self.subject_ids[rows],
        )

    def validate(self):
        """Ingestion-level checks beyond array shapes."""
        if self.n < MIN_SUBJECTS:
            raise ValidationError(f"need at least {MIN_SUBJECTS} complete subjects, got {self.n}")
        if np.ptp(self.current_treatment) == 0:
            raise ValidationError("treatment of interest has no variation")
        return self

    def columns(self):
        cols = ["subject_id"] + [f"t{j + 1}" for j in range(self.p)]
        cols += [f"x_{c}" for c in self.covariate_names]
        for i in self.time_points:
            cols += [f"y{i}_{item}" for item in self.item_names]
        return cols


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def write_csv(dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.columns())
        for s in range(dataset.n):
            row = [dataset.subject_ids[s]]
            row += [_fmt(v) for v in dataset.treatments[s]]
            row += [_fmt(v) for v in dataset.covariates[s]]
            row += [_fmt(v) for v in dataset.outcomes[:, s, :].ravel()]
            w.writerow(row)


def parse_header(header):
    """Map CSV header names to (treatment, covariate, outcome) column layouts."""
    if "subject_id" not in header:
        raise ValidationError("missing required column 'subject_id'")
    t_cols, x_cols, y_cols, unknown = {}, [], {}, []
    for pos, name in enumerate(header):
        if name == "subject_id":
            continue
        if m := _T_COL.match(name):
            t_cols[int(m.group(1))] = pos
        elif m := _X_COL.match(name):
            x_cols.append((m.group(1), pos))
        elif m := _Y_COL.match(name):
            y_cols.setdefault(int(m.group(1)), []).append((m.group(2), pos))
        else:
            unknown.append(name)
    if unknown:
        raise ValidationError(f"unrecognized columns: {', '.join(unknown)}")
    if len(set(header)) != len(header):
        raise ValidationError("duplicate column names")
    p = len(t_cols)
    if sorted(t_cols) != list(range(1, p + 1)):
        raise ValidationError(f"treatment columns must be t1..t<p> without gaps, got {sorted(t_cols)}")
    if p < 2:
        raise ValidationError("need at least two treatment columns (t1, t2)")
    times = sorted(y_cols)
    if not times:
        raise ValidationError("no outcome columns y<i>_<item>")
    if times != list(range(p + 1, p + 1 + len(times))):
        raise ValidationError(f"outcome time points must run contiguously from {p + 1}, got {times}")
    items = [name for name, _ in y_cols[times[0]]]
    for i in times:
        names = [name for name, _ in y_cols[i]]
        if sorted(names) != sorted(items):
            raise ValidationError(f"time point {i} has a different item set")
    y_pos = [[dict(y_cols[i])[item] for item in items] for i in times]
    return {
        "p": p,
        "t_pos": [t_cols[j] for j in range(1, p + 1)],
        "x_names": [name for name, _ in x_cols],
        "x_pos": [pos for _, pos in x_cols],
        "items": items,
        "y_pos": y_pos,
    }


def read_csv(path, orientation="improvement"):
    """Read a dataset, dropping subjects with any missing field (complete-case)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError("empty file: header row required")
    header = [h.strip() for h in rows[0]]
    layout = parse_header(header)
    ids, values = [], []
    numeric = [c for c in range(len(header)) if header[c] != "subject_id"]
    sid_pos = header.index("subject_id")
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValidationError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        vals = np.full(len(header), np.nan)
        for c in numeric:
            cell = row[c].strip()
            if cell in ("", "NA", "NaN", "nan"):
                continue
            try:
                vals[c] = float(cell)
            except ValueError:
                raise ValidationError(f"line {lineno}: column {header[c]!r} is not numeric: {cell!r}") from None
        if row[sid_pos].strip() == "" or np.isnan(vals[numeric]).any():
            continue
        ids.append(row[sid_pos].strip())
        values.append(vals)
    if not values:
        raise ValidationError("no complete subjects")
    V = np.vstack(values)
    ds = LongitudinalDataset(
        treatments=V[:, layout["t_pos"]],
        outcomes=np.stack([V[:, pos] for pos in layout["y_pos"]]),
        covariates=V[:, layout["x_pos"]] if layout["x_pos"] else None,
        item_names=layout["items"],
        covariate_names=layout["x_names"],
        subject_ids=np.array(ids),
        orientation=orientation,
    )
    return ds.validate()
