"""Command-line front end: simulate scenarios, run pipelines, compare filters.

Exit codes: 0 success, 2 configuration/validation problem, 3 numerical
failure mid-run (partial logs are still flushed).
"""

import argparse
import csv
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from ._kernels import active_backend
from .config import ScenarioConfig, load_config
from .errors import ConfigError, CsvFormatError
from .runner import RunResult, run_scenario, simulate_scenario
from .scenario import load_csv, save_csv

_COMPARE_ROWS = (
    ("ekf", "EKF", False),
    ("ukf", "UKF", False),
    ("ckf", "CKF", False),
    ("optimized-ekf", "Optimized EKF", True),
    ("optimized-ukf", "Optimized UKF", True),
    ("hybrid", "Hybrid", True),
)
_COMPARE_KEYS = tuple(key for key, _, _ in _COMPARE_ROWS)


def _write_manifest(out_dir: Path, command: str, config_path, seeds, artifacts,
                    runtime_s: float) -> None:
    manifest = {
        "tool": "mmwloc",
        "version": __version__,
        "backend": active_backend(),
        "command": command,
        "config": str(config_path) if config_path else None,
        "seeds": seeds,
        "output_dir": str(out_dir),
        "artifacts": sorted(artifacts),
        "runtime_s": runtime_s,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "filter", None):
        cfg.pipeline.filter = args.filter
    if getattr(args, "no_gating", False):
        cfg.pipeline.gating = False
    if getattr(args, "no_adapt", False):
        cfg.pipeline.adaptation = False
    if getattr(args, "no_smooth", False):
        cfg.pipeline.smoothing = False
    if getattr(args, "flat", False):
        cfg.pipeline.flat = True
    cfg.validate()
    return cfg


def _float_cell(value) -> str:
    return repr(float(value))


def _write_epoch_log(path: Path, result: RunResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "epoch", "mode", "filter", "speed", "accepted", "nis",
            "gate_threshold", "gamma", "switched", "warning",
            "est_x", "est_y", "est_z", "est_vx", "est_vy", "est_vz", "est_b",
        ])
        for log in result.logs:
            writer.writerow([
                log.epoch,
                log.mode.value,
                log.filter_used,
                _float_cell(log.speed),
                "" if log.accepted is None else int(log.accepted),
                "" if log.nis is None else _float_cell(log.nis),
                "" if log.gate_threshold is None else _float_cell(log.gate_threshold),
                _float_cell(log.gamma),
                int(log.switched),
                log.warning or "",
                *[_float_cell(v) for v in log.posterior.mean],
            ])


def _write_trajectory(path: Path, result: RunResult) -> None:
    n = len(result.logs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["epoch"]
        header += [f"true_{c}" for c in ("x", "y", "z", "vx", "vy", "vz", "b")]
        header += [f"filtered_{c}" for c in ("x", "y", "z", "vx", "vy", "vz", "b")]
        header += [f"smoothed_{c}" for c in ("x", "y", "z", "vx", "vy", "vz", "b")]
        writer.writerow(header)
        for k in range(n):
            row = [result.logs[k].epoch]
            row += [_float_cell(v) for v in result.truth.states[k]]
            row += [_float_cell(v) for v in result.filtered_means[k]]
            if result.smoothed_means is not None:
                row += [_float_cell(v) for v in result.smoothed_means[k]]
            else:
                row += [""] * 7
            writer.writerow(row)


def cmd_simulate(args) -> int:
    start = time.perf_counter()
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth, bundles = simulate_scenario(cfg)
    scenario_path = out_dir / "scenario.csv"
    save_csv(scenario_path, truth, bundles, cfg.anchors)
    _write_manifest(out_dir, "simulate", args.config, [cfg.seed],
                    [scenario_path.name], time.perf_counter() - start)
    print(f"wrote {scenario_path} ({len(bundles)} epochs, seed {cfg.seed})")
    return 0


def cmd_run(args) -> int:
    start = time.perf_counter()
    cfg = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.input:
        truth, bundles = load_csv(args.input, cfg.anchors, cfg.noise,
                                  dt=cfg.trajectory.dt)
        result = run_scenario(cfg, truth=truth, bundles=bundles)
    else:
        result = run_scenario(cfg)

    artifacts = []
    log_path = out_dir / "epoch_log.csv"
    _write_epoch_log(log_path, result)
    artifacts.append(log_path.name)

    runtime = time.perf_counter() - start
    if result.failed is not None:
        _write_manifest(out_dir, "run", args.config, [cfg.seed], artifacts, runtime)
        print(f"numerical failure: {result.failed}; partial log in {log_path}",
              file=sys.stderr)
        return 3

    traj_path = out_dir / "trajectory.csv"
    _write_trajectory(traj_path, result)
    artifacts.append(traj_path.name)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(result.report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    artifacts.append(report_path.name)
    _write_manifest(out_dir, "run", args.config, [cfg.seed], artifacts, runtime)

    m = result.report.metrics
    print(
        f"filter={cfg.pipeline.filter} seed={cfg.seed} epochs={result.report.epochs} "
        f"ate={m.ate:.4f} rpe={m.rpe:.4f} rmse={m.rmse:.4f} "
        f"nees={m.nees_mean:.3f} rejections={result.report.gate_rejection_rate:.3f} "
        f"runtime={runtime:.2f}s"
    )
    return 0


def _parse_seeds(text: str):
    seeds = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if "-" in token[1:]:
            lo, hi = token.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(token))
    if not seeds:
        raise ConfigError("--seeds produced an empty list")
    return seeds


def cmd_compare(args) -> int:
    start = time.perf_counter()
    cfg = load_config(args.config)
    if args.flat:
        cfg.pipeline.flat = True
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = _parse_seeds(args.seeds)
    wanted = (
        tuple(t.strip() for t in args.filters.split(",") if t.strip())
        if args.filters else _COMPARE_KEYS
    )
    unknown = [w for w in wanted if w not in _COMPARE_KEYS]
    if unknown:
        raise ConfigError(f"--filters: unknown entries {unknown}; choose from {_COMPARE_KEYS}")

    rows = []
    for key, label, optimized in _COMPARE_ROWS:
        if key not in wanted:
            continue
        totals = {"ate": 0.0, "rpe": 0.0, "nees": 0.0, "rmse": 0.0}
        for seed in seeds:
            variant = cfg.copy()
            variant.seed = seed
            variant.pipeline.filter = key.replace("optimized-", "")
            variant.pipeline.gating = optimized
            variant.pipeline.adaptation = optimized
            variant.pipeline.smoothing = optimized
            result = run_scenario(variant)
            if result.failed is not None:
                print(f"numerical failure ({label}, seed {seed}): {result.failed}",
                      file=sys.stderr)
                return 3
            m = result.report.metrics
            totals["ate"] += m.ate
            totals["rpe"] += m.rpe
            totals["nees"] += m.nees_mean
            totals["rmse"] += m.rmse
        rows.append([label, len(seeds)] + [
            _float_cell(totals[k] / len(seeds)) for k in ("ate", "rpe", "nees", "rmse")
        ])

    table_path = out_dir / "compare.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filter", "seeds", "ate", "rpe", "nees", "rmse"])
        writer.writerows(rows)
    _write_manifest(out_dir, "compare", args.config, seeds, [table_path.name],
                    time.perf_counter() - start)
    for row in rows:
        print(f"{row[0]:>14}: ate={float(row[2]):.4f} rpe={float(row[3]):.4f} "
              f"nees={float(row[4]):.3f} rmse={float(row[5]):.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmwloc",
        description="Mobility-aware hybrid EKF/UKF localization experiments",
    )
    parser.add_argument("--version", action="version", version=f"mmwloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a scenario CSV")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    run = sub.add_parser("run", help="run a pipeline, emit report + logs")
    run.add_argument("--config", required=True)
    run.add_argument("--input", default=None, help="scenario CSV (default: simulate)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--filter", choices=("hybrid", "ekf", "ukf", "ckf"), default=None)
    run.add_argument("--no-gating", action="store_true")
    run.add_argument("--no-adapt", action="store_true")
    run.add_argument("--no-smooth", action="store_true")
    run.add_argument("--flat", action="store_true", help="pin the vertical axis (2-D mode)")
    run.add_argument("--out", required=True)
    run.set_defaults(func=cmd_run)

    cmp_ = sub.add_parser("compare", help="filter comparison table over seeds")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--seeds", required=True, help="e.g. 0,1,2 or 0-99")
    cmp_.add_argument("--filters", default=None,
                      help=f"comma list from {','.join(_COMPARE_KEYS)}")
    cmp_.add_argument("--flat", action="store_true")
    cmp_.add_argument("--out", required=True)
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CsvFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
