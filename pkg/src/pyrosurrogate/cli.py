"""Command-line pipeline: simulate, tune, train, predict, optimize, edge-sim.

Exit codes: 0 ok, 2 config error, 3 schema error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import plantsim
from .edge import EdgeConfig, rolling_score, run_edge
from .errors import (
    ConfigError,
    DecodeError,
    DimensionError,
    EmptyTableError,
    OrderingError,
    SchemaError,
)
from .forest import FORMAT_VERSION, HyperParams, fit_forest, load_model, save_model
from .optimizer import Constraint, ConstrainedProblem, DEFAULT_CONSTRAINT_BOUNDS, brute_force_reference, minimize
from .telemetry import DEFAULT_LAG, Schema, fit_normalizer, flatten, ingest_csv
from .tuner import CVReport, default_grid, grid_search, r2

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCHEMA = 3
EXIT_IO = 4


class CommandError(Exception):
    def __init__(self, message: str, exit_code: int) -> None:
        super().__init__(message)
        self.exit_code = exit_code


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, inputs, outputs, seed, config_digest, started: float) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "model_format_version": FORMAT_VERSION,
        "seed": seed,
        "config_digest": config_digest,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "timings": {"seconds": round(time.perf_counter() - started, 6)},
    }
    path = Path(str(out) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _digest_obj(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def _load_table(path, target: str | Sequence[str], lag: int):
    targets = [target] if isinstance(target, str) else list(target)
    records = ingest_csv(path, plantsim.SCHEMA)
    return flatten(records, lag, targets, state_names=plantsim.STATE_NAMES)


def _split_holdout(table, holdout: float):
    if not 0.0 <= holdout < 1.0:
        raise CommandError("--holdout must lie in [0, 1)", EXIT_CONFIG)
    n = table.n_rows
    cut = n - int(round(holdout * n))
    return table.take(slice(0, cut)), table.take(slice(cut, n))


def _read_grid(path) -> list[HyperParams]:
    if path is None:
        return default_grid()
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    try:
        if isinstance(spec, list):
            return [HyperParams.from_dict(d) for d in spec]
        keys = list(spec)
        unknown = [k for k in keys if k not in HyperParams.__dataclass_fields__]
        if unknown:
            raise ConfigError(unknown[0], "unknown hyperparameter")
        values = [spec[k] if isinstance(spec[k], list) else [spec[k]] for k in keys]
        return [HyperParams(**dict(zip(keys, combo))) for combo in itertools.product(*values)]
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(path), str(exc)) from None


def _read_hyper(args) -> HyperParams:
    if args.report:
        rep = CVReport.from_dict(json.loads(Path(args.report).read_text()))
        hyper = rep.best
    elif args.hyper:
        try:
            hyper = HyperParams.from_dict(json.loads(Path(args.hyper).read_text()))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(args.hyper), str(exc)) from None
    else:
        hyper = HyperParams()
    from dataclasses import replace

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.max_depth is not None:
        overrides["max_depth"] = args.max_depth
    if args.n_estimators is not None:
        overrides["n_estimators"] = args.n_estimators
    return replace(hyper, **overrides)


# ----------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    started = time.perf_counter()
    config = plantsim.load_config(args.config)
    if args.seed is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)
    if args.noise is not None:
        config = config.with_noise(args.noise)
    records = plantsim.generate_dataset(config, args.n)
    out = Path(args.out)
    plantsim.write_dataset(records, out)
    inputs = [args.config] if args.config else []
    write_manifest(out, "simulate", inputs, [out], config.seed, _digest_obj(plantsim.dump_config(config)), started)
    return EXIT_OK


def cmd_tune(args) -> int:
    started = time.perf_counter()
    table = _load_table(args.data, args.target, args.lag)
    dev, _ = _split_holdout(table, args.holdout)
    grid = _read_grid(args.grid)
    seed = args.seed or 0
    report = grid_search(dev, args.target, grid, k=args.k, seed=seed)
    out = Path(args.out)
    report.write_json(out)
    inputs = [args.data] + ([args.grid] if args.grid else [])
    write_manifest(out, "tune", inputs, [out], seed, _digest_obj([h.to_dict() for h in grid]), started)
    print(json.dumps({"best": report.best_index, "mean_mse": report.mean_mse[report.best_index]}))
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.perf_counter()
    table = _load_table(args.data, args.target, args.lag)
    dev, test = _split_holdout(table, args.holdout)
    hyper = _read_hyper(args)
    train = fit_normalizer(dev)
    model = fit_forest(train, args.target, hyper)
    out = Path(args.out)
    bin_path, meta_path = save_model(model, out)
    info = {"target": args.target, "n_train": train.n_rows}
    if test.n_rows >= 2:
        pred = model.predict_many(train.norm_stats.apply(test.rows))
        info["holdout_r2"] = r2(test.target(args.target), pred)
        info["n_holdout"] = test.n_rows
    print(json.dumps(info))
    inputs = [args.data] + [p for p in (args.report, args.hyper) if p]
    write_manifest(out, "train", inputs, [bin_path, meta_path], hyper.seed, _digest_obj(hyper.to_dict()), started)
    return EXIT_OK


def cmd_predict(args) -> int:
    started = time.perf_counter()
    model = load_model(args.model)
    records = ingest_csv(args.data, plantsim.SCHEMA)
    table = flatten(records, model.lag, [], state_names=plantsim.STATE_NAMES)
    if tuple(table.feature_names) != tuple(model.feature_names):
        raise SchemaError("data columns do not match the model's features")
    X = table.rows if model.norm_stats is None else model.norm_stats.apply(table.rows)
    pred = model.predict_many(X)
    out = Path(args.out)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", model.target_name])
        for ts, p in zip(table.timestamps.tolist(), pred.tolist()):
            w.writerow([ts, repr(p)])
    write_manifest(out, "predict", [args.data, args.model], [out], None, "", started)
    return EXIT_OK


def _parse_constraint(text: str):
    # name=path[:lower:upper]
    if "=" not in text:
        raise ConfigError("--constraint", f"expected name=model[:lower:upper], got {text!r}")
    name, rest = text.split("=", 1)
    parts = rest.split(":")
    path = parts[0]
    if len(parts) == 3:
        try:
            lo, hi = float(parts[1]), float(parts[2])
        except ValueError:
            raise ConfigError("--constraint", f"bad bounds in {text!r}") from None
    elif len(parts) == 1:
        if name not in DEFAULT_CONSTRAINT_BOUNDS:
            raise ConfigError("--constraint", f"no default bounds for {name!r}")
        lo, hi = DEFAULT_CONSTRAINT_BOUNDS[name]
    else:
        raise ConfigError("--constraint", f"expected name=model[:lower:upper], got {text!r}")
    return name, path, lo, hi


def _decision_bounds(args) -> list[tuple[float, float]]:
    config = plantsim.load_config(args.config)
    bounds = {s: tuple(config.state_bounds[s]) for s in plantsim.STATE_NAMES}
    for item in args.bound or []:
        try:
            name, rng = item.split("=", 1)
            lo, hi = (float(v) for v in rng.split(":"))
        except ValueError:
            raise ConfigError("--bound", f"expected state=lower:upper, got {item!r}") from None
        if name not in bounds:
            raise ConfigError("--bound", f"unknown state {name!r}")
        bounds[name] = (lo, hi)
    return [bounds[s] for s in plantsim.STATE_NAMES]


def cmd_optimize(args) -> int:
    started = time.perf_counter()
    objective = load_model(args.model)
    inputs = [args.model]
    cons = []
    for text in args.constraint or []:
        name, path, lo, hi = _parse_constraint(text)
        model = load_model(path)
        if model.target_name != name:
            raise SchemaError(f"constraint {name!r} points at a model for {model.target_name!r}")
        cons.append(Constraint(model, lo, hi))
        inputs.append(path)
    try:
        problem = ConstrainedProblem(objective, tuple(cons), tuple(_decision_bounds(args)), plantsim.STATE_NAMES)
    except ValueError as exc:
        raise ConfigError("--bound", str(exc)) from None
    trace = minimize(problem, args.budget, args.seed or 0)
    out = Path(args.out)
    trace.write_csv(out)
    summary_path = Path(args.summary) if args.summary else out.with_suffix(".summary.json")
    summary = trace.summary()
    if args.reference_resolution:
        state, obj = brute_force_reference(problem, args.reference_resolution)
        summary["reference"] = {
            "resolution": args.reference_resolution,
            "objective": obj,
            "state": None if state is None else dict(zip(problem.state_names, map(float, state))),
        }
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    write_manifest(out, "optimize", inputs, [out, summary_path], args.seed or 0,
                   _digest_obj({"bounds": problem.decision_bounds, "budget": args.budget}), started)
    print(json.dumps({"feasible": summary["feasible"], "objective": summary["objective"]}))
    return EXIT_OK


def cmd_edge_sim(args) -> int:
    started = time.perf_counter()
    warm = load_model(args.model)
    records = ingest_csv(args.data, plantsim.SCHEMA)
    hyper = HyperParams(n_estimators=args.n_estimators, max_depth=2, seed=args.seed or 0)
    config = EdgeConfig(warm_model=warm, retrain_period=args.period, window=args.window, edge_hyper=hyper)
    log = run_edge(config, records, args.duration)
    out = Path(args.out)
    log.write_csv(out)
    outputs = [out]
    if args.models_dir:
        d = Path(args.models_dir)
        d.mkdir(parents=True, exist_ok=True)
        for mid, model in sorted(log.models.items()):
            outputs.extend(save_model(model, d / f"model_{mid}.pyrf"))
    report = rolling_score(log)
    print(json.dumps({
        "retrains": sum(not r.skipped for r in log.retrains),
        "skipped": sum(r.skipped for r in log.retrains),
        "segments": [{"model_id": s.retrain_id, "r2": s.r2, "n": s.n} for s in report.segments],
    }))
    write_manifest(out, "edge-sim", [args.data, args.model], outputs, args.seed or 0,
                   _digest_obj({"period": args.period, "window": args.window, "duration": args.duration}), started)
    return EXIT_OK


# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pyrosurrogate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"model format {FORMAT_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic telemetry")
    p.add_argument("--config", help="plant config (key-value file)")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="override every sensor's noise std")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    def data_args(p):
        p.add_argument("--data", required=True, help="telemetry CSV")
        p.add_argument("--target", default="nox")
        p.add_argument("--lag", type=int, default=DEFAULT_LAG)
        p.add_argument("--holdout", type=float, default=0.0, help="final fraction of rows kept out")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("tune", help="k-fold grid search")
    data_args(p)
    p.add_argument("--grid", help="JSON grid: list of combos or {param: [values]}")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("train", help="fit and store a forest")
    data_args(p)
    p.add_argument("--report", help="CV report JSON; its best combo is used")
    p.add_argument("--hyper", help="hyperparameter JSON")
    p.add_argument("--n-estimators", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict a telemetry CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("optimize", help="minimize the objective model under constraints")
    p.add_argument("--model", required=True, help="objective model (NOx)")
    p.add_argument("--constraint", action="append", help="name=model[:lower:upper]")
    p.add_argument("--bound", action="append", help="state=lower:upper (defaults: plant bounds)")
    p.add_argument("--config", help="plant config providing default bounds")
    p.add_argument("--budget", type=int, default=2000)
    p.add_argument("--seed", type=int)
    p.add_argument("--reference-resolution", type=int, help="also run the grid reference")
    p.add_argument("--summary")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("edge-sim", help="emulate on-device retraining")
    p.add_argument("--model", required=True, help="warm model")
    p.add_argument("--data", required=True, help="telemetry stream CSV")
    p.add_argument("--duration", type=int, default=86400)
    p.add_argument("--period", type=int, default=7200)
    p.add_argument("--window", type=int, default=1440)
    p.add_argument("--n-estimators", type=int, default=20)
    p.add_argument("--seed", type=int)
    p.add_argument("--models-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_edge_sim)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SchemaError, DimensionError, OrderingError, EmptyTableError, DecodeError) as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
