"""Command-line interface: simulate, fit, evaluate, gradcheck.

Exit codes: 0 success, 1 I/O, 2 validation, 3 abstention, 4 gradcheck failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import read_csv, write_csv
from .errors import AllAbstained, DebiasError
from .evaluation import bootstrap_evaluate, default_methods
from .objective import Objective, prepare
from .optimizer import OptimizerConfig
from .selection import SelectionConfig, cross_validate
from .simulate import GroundTruth, SimulationSpec, preset, simulate

log = logging.getLogger("debias")

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_ABSTAINED, EXIT_GRADCHECK = 0, 1, 2, 3, 4
SCHEMA_VERSION = 1
GRADCHECK_TOL = 1e-3

_SEL_KEYS = {f.name for f in fields(SelectionConfig)}
_OPT_KEYS = {f.name for f in fields(OptimizerConfig)} - {"seed"}
_RUN_KEYS = {"threads", "replicates", "orientation", "main", "gradcheck_lambda"}


class UsageError(Exception):
    """Bad configuration or arguments; maps to the validation exit code."""


def _parse_grid(text):
    try:
        grid = tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise UsageError(f"lambda_grid: cannot parse {text!r}") from None
    if not grid:
        raise UsageError("lambda_grid is empty")
    return grid


def read_config(path):
    """Flat ``key = value`` file; section headers are optional and ignored."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        parser.read_string("[debias]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        out.update(parser[section])
    unknown = set(out) - _SEL_KEYS - _OPT_KEYS - _RUN_KEYS
    if unknown:
        raise UsageError(f"config {path}: unknown keys {sorted(unknown)}")
    return out


def build_settings(args):
    """Merge defaults, config file and command-line flags (flags win)."""
    raw = read_config(args.config) if getattr(args, "config", None) else {}
    for key in ("lambda_grid", "folds", "gamma", "scores", "mode", "replicates", "threads", "orientation"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = val
    raw["seed"] = args.seed
    sel_kw, opt_kw = {}, {}
    try:
        for key, val in raw.items():
            if key == "lambda_grid":
                sel_kw[key] = _parse_grid(val)
            elif key in ("folds", "scores", "seed"):
                sel_kw[key] = int(val)
            elif key == "gamma":
                sel_kw[key] = float(val)
            elif key == "mode":
                sel_kw[key] = str(val)
            elif key in ("max_iterations",):
                opt_kw[key] = int(val)
            elif key in _OPT_KEYS:
                opt_kw[key] = float(val)
        sel = SelectionConfig(**sel_kw)
        opt = OptimizerConfig(seed=int(raw["seed"]), **opt_kw)
        run = {
            "threads": int(raw.get("threads", os.cpu_count() or 1)),
            "replicates": int(raw.get("replicates", 1000)),
            "orientation": str(raw.get("orientation", "improvement")),
            "main": str(raw.get("main", "correlation")),
            "gradcheck_lambda": float(raw.get("gradcheck_lambda", 1.0)),
        }
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if run["orientation"] not in ("improvement", "severity"):
        raise UsageError("orientation must be 'improvement' or 'severity'")
    if run["main"] not in ("correlation", "mse"):
        raise UsageError("main must be 'correlation' or 'mse'")
    if run["threads"] < 1 or run["replicates"] < 2:
        raise UsageError("threads must be >= 1 and replicates >= 2")
    return sel, opt, run


def config_echo(sel, opt, run):
    echo = {"selection": asdict(sel), "optimizer": asdict(opt), "run": dict(run)}
    echo["selection"]["lambda_grid"] = list(sel.lambda_grid)
    return echo


def config_hash(echo):
    # thread count does not change results, so it is left out of the hash
    payload = {**echo, "run": {k: v for k, v in echo["run"].items() if k != "threads"}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _out_prefix(out):
    if out.endswith(("/", os.sep)) or Path(out).is_dir():
        Path(out).mkdir(parents=True, exist_ok=True)
        return Path(out) / "sim"
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    return Path(out)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")


# commands


def cmd_simulate(args):
    if args.spec_file:
        with open(args.spec_file, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"spec file {args.spec_file}: {exc}") from None
        base = d.pop("preset", None) or args.preset
        parsed = SimulationSpec.from_dict(d)
        # fields named in the file override the preset; the rest keep preset values
        spec = replace(preset(base), **{k: getattr(parsed, k) for k in d}) if base else parsed
    else:
        spec = preset(args.preset or "tads-like")
    spec = replace(spec, seed=args.seed).validate()
    dataset, truth = simulate(spec)
    prefix = _out_prefix(args.out)
    data_path = Path(f"{prefix}_data.csv")
    truth_path = Path(f"{prefix}_truth.json")
    write_csv(dataset, data_path)
    truth.write(truth_path)
    print(f"wrote {data_path} ({dataset.n} subjects) and {truth_path}")
    return EXIT_OK


def cmd_fit(args):
    sel, opt, run = build_settings(args)
    dataset = read_csv(args.data, orientation=run["orientation"])
    echo = config_echo(sel, opt, run)
    result = cross_validate(dataset, sel, opt, run["main"], n_jobs=run["threads"])
    report = {
        "schema_version": SCHEMA_VERSION,
        "version": __version__,
        "seed": args.seed,
        "config": echo,
        "config_hash": config_hash(echo),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "data": str(args.data),
        "n_subjects": dataset.n,
        **result.to_dict(),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_json(out, report)
    if result.abstained:
        print(f"abstained: no lambda passed gamma={sel.gamma}; partial report in {out}", file=sys.stderr)
        return EXIT_ABSTAINED
    w = result.final_fit.weights[0]
    top = np.argsort(-w)[:5]
    print(f"lambda={result.chosen_lambda:g}; top items of score 1: "
          + ", ".join(f"{dataset.item_names[i]}={w[i]:.3f}" for i in top))
    return EXIT_OK


def cmd_evaluate(args):
    sel, opt, run = build_settings(args)
    dataset = read_csv(args.data, orientation=run["orientation"])
    truth = GroundTruth.read(args.truth)
    bad = [i for i in truth.confounded_union() if not 0 <= i < dataset.q]
    if bad or len(truth.confounded_items) != len(dataset.time_points):
        raise UsageError(f"truth file {args.truth} does not match the dataset dimensions")
    report = bootstrap_evaluate(dataset, truth, default_methods(), run["replicates"], sel, opt,
                                seed=args.seed, n_jobs=run["threads"])
    echo = config_echo(sel, opt, run)
    prefix = _out_prefix(args.out)
    doc = {
        "version": __version__,
        "seed": args.seed,
        "config": echo,
        "config_hash": config_hash(echo),
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        **report.to_dict(),
    }
    _write_json(Path(f"{prefix}_report.json"), doc)
    report.write_csv(Path(f"{prefix}_tidy.csv"))
    print(f"wrote {prefix}_report.json and {prefix}_tidy.csv ({len(report.replicates)} replicates, "
          f"{report.n_skipped} skipped)")
    return EXIT_OK


def _finite_difference(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def gradient_check(problem, lam, points=20, scores=3, seed=0):
    """Max relative error of the analytic gradient against central differences."""
    rng = np.random.default_rng(seed)
    q = problem.q
    previous = [rng.dirichlet(np.ones(q)) for _ in range(min(scores, q) - 1)] if q > 1 else []
    worst = {}
    for main in ("correlation", "mse"):
        obj = Objective(problem, lam, previous, main)
        err = 0.0
        for _ in range(points):
            a = rng.dirichlet(np.ones(q))
            g = obj.gradient(a)
            fd = _finite_difference(obj.value, a)
            # central differences carry ~1e-10 noise; a zero gradient (q = 1) must not divide by it
            scale = max(np.linalg.norm(fd), np.linalg.norm(g), 1e-6)
            err = max(err, float(np.linalg.norm(g - fd) / scale))
        worst[main] = err
    return worst


def cmd_gradcheck(args):
    sel, opt, run = build_settings(args)
    dataset = read_csv(args.data, orientation=run["orientation"])
    worst = gradient_check(prepare(dataset), run["gradcheck_lambda"], scores=sel.scores, seed=args.seed)
    ok = all(v < GRADCHECK_TOL for v in worst.values())
    print(json.dumps({"max_relative_error": worst, "tolerance": GRADCHECK_TOL, "passed": ok}))
    return EXIT_OK if ok else EXIT_GRADCHECK


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--verbose", "-v", action="store_true")

    tuning = argparse.ArgumentParser(add_help=False)
    tuning.add_argument("--config", help="flat key = value settings file")
    tuning.add_argument("--threads", type=int)
    tuning.add_argument("--lambda-grid", dest="lambda_grid", help="comma-separated, e.g. 0,1,2")
    tuning.add_argument("--folds", type=int)
    tuning.add_argument("--gamma", type=float)
    tuning.add_argument("--scores", type=int)
    tuning.add_argument("--mode", choices=["abstain", "closest-below"])
    tuning.add_argument("--orientation", choices=["improvement", "severity"])

    parser = argparse.ArgumentParser(prog="debias", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset and its ground truth")
    p.add_argument("--preset", choices=["tads-like", "catie-like"])
    p.add_argument("--spec-file", help="JSON with SimulationSpec fields (optionally a 'preset' key)")
    p.add_argument("--out", required=True, help="output prefix, or a directory ending in '/'")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", parents=[common, tuning], help="select lambda by CV and fit scores")
    p.add_argument("data")
    p.add_argument("--out", required=True, help="FitResult JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("evaluate", parents=[common, tuning], help="bootstrap comparison against ablations")
    p.add_argument("data")
    p.add_argument("truth")
    p.add_argument("--replicates", type=int)
    p.add_argument("--out", required=True, help="output prefix for _report.json and _tidy.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", parents=[common, tuning], help="compare gradients with finite differences")
    p.add_argument("data")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AllAbstained as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ABSTAINED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, DebiasError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
