"""Command-line front end: run benchmark suites, calibrate thresholds, sweep.

Exit code 0 on success; any failure prints a one-line reason to stderr and
returns a nonzero code.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import config as config_mod
from . import harness, trace
from .threshold import calibrate


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="flat key=value configuration file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--suite", default=None, help="restrict to one suite")
    p.add_argument("--trials", type=int, default=None, help="override trials per suite")
    p.add_argument("--seed", type=int, default=None, help="offset added to suite seed bases")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kerv",
        description="speculative-decoding simulator for 7-DoF action tokens",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run benchmark suites and emit reports")
    _add_common(run_p)
    run_p.add_argument(
        "--mode",
        choices=("naive", "fixed_relaxed", "kerv"),
        default=None,
        help="restrict to one decoding mode (default: run.modes from config)",
    )

    cal_p = sub.add_parser("calibrate", help="build a threshold calibration table")
    cal_p.add_argument("--traces", required=True, help="directory of pre-sample trace files")
    cal_p.add_argument("--grid", required=True, help="grid file: grid.tau / grid.phi CSV lines")
    cal_p.add_argument("--out", required=True, help="output table path")
    cal_p.add_argument("--config", default=None, help="optional config for bounds and codec")

    sweep_p = sub.add_parser("sweep", help="sweep one hyperparameter")
    _add_common(sweep_p)
    sweep_p.add_argument("--param", required=True, choices=harness.SWEEP_PARAMS)
    sweep_p.add_argument("--values", required=True, help="comma-separated values")

    return parser


def _cmd_run(args) -> int:
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed_offset=args.seed)
    modes = (args.mode,) if args.mode else None
    suites = (args.suite,) if args.suite else None
    report, traces = harness.run_suite(cfg, modes=modes, suites=suites, trials=args.trials)
    harness.emit_results(report, traces, args.out)
    sys.stdout.write(report.render(include_wallclock=True))
    return 0


def _parse_grid(path: str) -> list[tuple[float, float]]:
    mapping = config_mod.parse_mapping(Path(path).read_text())
    try:
        taus = [float(x) for x in mapping["grid.tau"].split(",") if x.strip()]
        phis = [float(x) for x in mapping["grid.phi"].split(",") if x.strip()]
    except KeyError as exc:
        raise config_mod.ConfigError(f"grid file is missing {exc.args[0]}") from None
    return [(t, p) for t in taus for p in phis]


def _cmd_calibrate(args) -> int:
    traces = trace.load_dir(args.traces)
    grid = _parse_grid(args.grid)
    kwargs = {}
    if args.config:
        cfg = config_mod.load(args.config)
        kwargs = {
            "r_max": cfg.r_max,
            "r_min": cfg.r_min,
            "key": cfg.key,
            "mode": cfg.threshold_mode,
        }
    table = calibrate(traces, grid, **kwargs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.save(out)
    sys.stdout.write(f"wrote {len(table.rows)} calibration rows to {out}\n")
    return 0


def _cmd_sweep(args) -> int:
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed_offset=args.seed)
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        raise config_mod.ConfigError("sweep needs at least one value")
    table = None
    if args.param in ("n", "ac", "pl"):
        if not cfg.table_path:
            raise config_mod.ConfigError(
                f"sweeping {args.param} runs the adaptive mode: set threshold.table"
            )
        from .threshold import CalibrationTable

        table = CalibrationTable.load(cfg.table_path)
    suites = (args.suite,) if args.suite else None
    rows = harness.sweep(
        cfg, args.param, values, suites=suites, trials=args.trials, table=table
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = harness.render_sweep(rows)
    (out / f"sweep_{args.param}.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        raise AssertionError(f"unhandled command {args.command}")
    except Exception as exc:  # one-line reason, nonzero exit
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
