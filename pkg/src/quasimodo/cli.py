"""``quasimodo <command> --config FILE [--out DIR] [--seed N] [--workers N]``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .config import ExperimentConfig, build_manifest
from .datagen import load_dataset, save_dataset
from .errors import ConfigError, QuasimodoError, SchemaMismatch
from .surrogates import load_model, save_model

log = logging.getLogger("quasimodo")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class InputError(Exception):
    """Missing or unreadable input file."""


def _out_dir(args, cfg):
    out = Path(args.out or cfg.section("output").get("dir") or f"runs/{cfg.name}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, cfg, command, seed, extra=None):
    manifest = build_manifest(cfg, command, seed, extra)
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _dataset_path(args, out):
    path = Path(args.dataset) if args.dataset else out / "dataset.csv"
    if not path.exists():
        raise InputError(f"dataset not found: {path} (run 'generate' first or pass --dataset)")
    return path


def cmd_generate(args, cfg):
    from .experiments import generate
    out = _out_dir(args, cfg)
    traj = generate(cfg)
    path = save_dataset(out / "dataset.csv", traj, {"config": cfg.name})
    print(f"wrote {len(traj)} rows to {path}")
    _write_manifest(out, cfg, "generate", cfg.section("data").get("seed", 0),
                    {"outputs": [path.name, path.name + ".json"], "rows": len(traj)})
    return EXIT_OK


def cmd_train(args, cfg):
    from .experiments import generate, train
    out = _out_dir(args, cfg)
    try:
        traj = load_dataset(_dataset_path(args, out))
    except OSError as exc:
        raise InputError(str(exc)) from None
    if cfg.section("model").get("kind") == "pod" and traj.states is None:
        # datasets hold observables only; POD needs the full state, so regenerate
        traj = generate(cfg)
    model, report = train(cfg, traj)
    path = save_model(out / "model.json", model)
    print(f"held-out one-step relative error: {report['one_step_error']:.3e}")
    print(f"wrote {path}")
    _write_manifest(out, cfg, "train", cfg.section("data").get("seed", 0),
                    {"outputs": [path.name], "report": report})
    return EXIT_OK


def cmd_mpc(args, cfg):
    from .experiments import closed_loop, write_closed_loop
    out = _out_dir(args, cfg)
    path = Path(args.model) if args.model else out / "model.json"
    if not path.exists():
        raise InputError(f"model not found: {path} (run 'train' first or pass --model)")
    model = load_model(path)
    logs, summary = closed_loop(cfg, model)
    paths = write_closed_loop(out, logs)
    for mode, m in summary["modes"].items():
        print(f"{mode:12s} mean|e|={m['mean_abs']:.4f} max|e|={m['max_abs']:.4f} "
              f"mse={m['mse']:.4g} |y(T)|={m['final_state_norm']:.4g}")
    if "uncontrolled_final_state_norm" in summary:
        print(f"uncontrolled |y(T)|={summary['uncontrolled_final_state_norm']:.4g}")
    print(f"closed loop took {summary['wall_time']:.1f} s")
    (out / "mpc_summary.json").write_text(json.dumps(summary, indent=2))
    _write_manifest(out, cfg, "mpc", cfg.section("data").get("seed", 0),
                    {"outputs": [p.name for p in paths.values()] + ["mpc_summary.json",
                                                                      "plot_mpc.py"],
                     "model": str(path)})
    return EXIT_OK


def cmd_verify_bounds(args, cfg):
    from .experiments import verify_bounds
    out = _out_dir(args, cfg)
    report = verify_bounds(cfg, out)
    s = report.summary()
    print(f"constants: L_g={report.constants.L_g:.4g} C1={report.constants.C1:.4g} "
          f"C2={report.constants.C2:.4g} L_P={report.L_P:.4g} D={report.D:.3g}")
    for k, v in s["final_state_inf"].items():
        print(f"{k:12s} |y(T)|_inf={v:.4f} J={s['objective'][k]:.6g}")
    print(f"violations: {len(report.violations)}")
    _write_manifest(out, cfg, "verify-bounds", report.config["seed"],
                    {"outputs": ["bounds_report.json", "bounds_series.csv", "plot_bounds.py"]})
    return EXIT_OK if not report.violations else EXIT_RUNTIME


def cmd_data_efficiency(args, cfg):
    from .experiments import data_efficiency, write_data_efficiency
    out = _out_dir(args, cfg)
    study = cfg.section("study")
    if not study:
        raise ConfigError("study", "missing")
    t0 = time.perf_counter()
    raw, stats = data_efficiency(study, workers=args.workers)
    write_data_efficiency(out, raw, stats)
    for row in stats:
        print(f"{row['variant']:24s} n={row['size']:6d} eval={row['eval']} "
              f"{row['model']:12s} {row['mean']:.4f} +- {row['std']:.4f}")
    _write_manifest(out, cfg, "data-efficiency", study.get("seed", 0),
                    {"outputs": ["data_efficiency.csv", "data_efficiency_trials.csv",
                                 "plot_data_efficiency.py"],
                     "workers": args.workers, "wall_time": time.perf_counter() - t0})
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "mpc": cmd_mpc,
            "verify-bounds": cmd_verify_bounds, "data-efficiency": cmd_data_efficiency}


def build_parser():
    ap = argparse.ArgumentParser(prog="quasimodo", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="YAML experiment file")
    ap.add_argument("--out", help="output directory (default: output.dir or runs/<name>)")
    ap.add_argument("--seed", type=int, help="override every seed in the config")
    ap.add_argument("--workers", type=int, default=1, help="parallel trials (data-efficiency)")
    ap.add_argument("--dataset", help="dataset CSV for 'train'")
    ap.add_argument("--model", help="model JSON for 'mpc'")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("--workers", "must be at least 1")
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed", "must be nonnegative")
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc.field}: {exc.reason}", file=sys.stderr)
        return EXIT_CONFIG
    except (InputError, SchemaMismatch) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QuasimodoError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
