"""Command line entry point: ``metaiot <command> [--config PATH] [--seed N] [--out PATH]``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import circuit, harness, optimizer, sensing
from .errors import (ArgumentError, CalibrationError, CompatibilityError, ConfigError, DataError,
                     DomainError, ShapeError)

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _config(args) -> harness.ScenarioConfig:
    cfg = harness.load_config(args.config) if args.config else harness.ScenarioConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _pipeline_config(args) -> sensing.PipelineConfig:
    kw = {}
    for key in ("epochs", "depth", "base_channels", "l_cut"):
        v = getattr(args, key, None)
        if v is not None:
            kw[key] = v
    return sensing.PipelineConfig(**kw)


def _out(args, default: str) -> Path:
    return Path(args.out if args.out else default)


def cmd_calibrate(args) -> None:
    cfg = _config(args)
    params = circuit.calibrate_parasitics(band=(cfg.grid.points[0], cfg.grid.points[-1]),
                                          nominal_d=cfg.structure)
    out = _out(args, "params.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    units = [{"parasitic_inductance": u.parasitic_inductance,
              "parasitic_capacitance": u.parasitic_capacitance,
              "unit_gap_capacitance": u.unit_gap_capacitance} for u in params.units]
    out.write_text(json.dumps({"units": units, "coupling_capacitance": params.coupling_capacitance,
                               "characteristic_impedance": params.characteristic_impedance}, indent=2))
    print(f"wrote {out}")


def cmd_design(args) -> None:
    cfg = _config(args)
    space = optimizer.DEFAULT_SPACE
    objective = optimizer.Discernibility(optimizer.DEFAULT_CONDITIONS, cfg.geometry, cfg.grid,
                                         n_dh=cfg.n_dh, space=space)
    res = optimizer.surrogate_optimize(objective, space, seed=cfg.seed, budget=args.budget,
                                       initial_points=space.grid_points())
    out = _out(args, "design.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    trace = out.with_name(out.stem + "_trace.csv")
    res.write_trace(trace)
    out.write_text(json.dumps({"structure": res.best.tolist(), "psi": res.best_value,
                               "evaluations": len(res.trace), "truncated": res.truncated,
                               "stop_reason": res.stop_reason, "trace": trace.name}, indent=2))
    print(f"d* = {np.round(res.best * 1e3, 4).tolist()} mm, psi = {res.best_value:.4f}")


def cmd_simulate(args) -> None:
    cfg = _config(args)
    if args.trials:
        cfg = replace(cfg, schedule=harness.default_schedule(cfg, args.trials, args.severity))
    times = range(1, cfg.horizon + 1 + args.trials)
    harness.write_dataset(_out(args, "dataset"), cfg, harness.generate_series(cfg, times))
    print(f"wrote {len(times)} steps to {_out(args, 'dataset')}")


def _split(cfg, series):
    pre = [ms for ms in series if ms.t <= cfg.horizon]
    post = [ms for ms in series if ms.t > cfg.horizon]
    return pre, post


def cmd_train(args) -> None:
    if not args.data:
        raise ConfigError("--data is required")
    cfg, series = harness.read_dataset(args.data)
    pre, _ = _split(cfg, series)
    pipe = sensing.train_pipeline(pre, _pipeline_config(args), cfg.seed if args.seed is None else args.seed,
                                  cfg.fingerprint())
    pipe.save(_out(args, "model"))
    print(f"trained; threshold {pipe.baselines.gamma_threshold:.4f}")


def _detect(args):
    if not args.data or not args.model:
        raise ConfigError("--data and --model are required")
    cfg, series = harness.read_dataset(args.data)
    pipe = sensing.TrainedPipeline.load(args.model)
    if pipe.fingerprint and pipe.fingerprint != cfg.fingerprint():
        raise CompatibilityError("model was trained for a different geometry or grid")
    _, post = _split(cfg, series)
    if not post:
        raise DataError("dataset has no steps after the training horizon")
    return cfg, [pipe.infer(ms) for ms in post]


def cmd_detect(args) -> None:
    _, reports = _detect(args)
    out = _out(args, "reports.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps([r.to_dict() for r in reports], indent=2))
    print(f"{sum(r.i_ano for r in reports)} of {len(reports)} steps flagged")


def cmd_eval_roc(args) -> None:
    cfg, reports = _detect(args)
    anomalous = {a.t for a in cfg.schedule}
    curve = harness.roc([r.gamma for r in reports if r.t not in anomalous],
                        [r.gamma for r in reports if r.t in anomalous])
    out = _out(args, "roc.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    curve.write_csv(out)
    print(f"wrote {len(curve.points)} ROC points to {out}")


def cmd_sweep(args) -> None:
    cfg = _config(args)
    values = [None if v.lower() in ("inf", "none") else float(v) for v in args.values.split(",")]
    out = _out(args, f"sweep_{args.axis}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = harness.sweep(cfg, args.axis, values, _pipeline_config(args), args.trials, out)
    for r in rows:
        print(f"{r['value']}: false alarm {r['false_alarm']}, miss {r['miss']}")


COMMANDS = {"calibrate": cmd_calibrate, "design": cmd_design, "simulate": cmd_simulate,
            "train": cmd_train, "detect": cmd_detect, "eval-roc": cmd_eval_roc, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaiot")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        if name == "design":
            p.add_argument("--budget", type=int, default=200)
        if name == "simulate":
            p.add_argument("--trials", type=int, default=0)
            p.add_argument("--severity", type=float, default=1.0)
        if name in ("train", "detect", "eval-roc"):
            p.add_argument("--data")
        if name in ("detect", "eval-roc"):
            p.add_argument("--model")
        if name in ("train", "sweep"):
            p.add_argument("--epochs", type=int)
            p.add_argument("--depth", type=int)
            p.add_argument("--base-channels", dest="base_channels", type=int)
            p.add_argument("--l-cut", dest="l_cut", type=int)
        if name == "sweep":
            p.add_argument("--axis", choices=harness.SWEEP_AXES, required=True)
            p.add_argument("--values", required=True)
            p.add_argument("--trials", type=int, default=20)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (ConfigError, ArgumentError, DomainError, CalibrationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ShapeError, CompatibilityError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
