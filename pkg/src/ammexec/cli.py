"""Command-line front end: solve, sweep, compare, fit-kernel, check.

Exit codes: 0 on success, 2 on configuration validation failure, 3 on
numerical failure (non-positive-definite system or a non-concave recursion
step). The AMM_EXEC_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import scenarios
from .errors import (
    AmmExecError,
    ConcavityError,
    ConfigError,
    DriftConditionError,
    FitConvergenceError,
)
from .grid import GridConfig
from .kernels import PowerLawTarget, fit_power_law
from .scenarios import SCENARIO_PRESETS, ScenarioConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _setup_logging() -> None:
    level = os.environ.get("AMM_EXEC_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _parse_grid_flag(text: str) -> GridConfig:
    parts = text.split(",")
    if len(parts) != 4:
        raise ConfigError([f"--grid: expected Kf,Kx,Ki,z with four values, got {text!r}"])
    try:
        return GridConfig(
            price_points=int(parts[0]),
            inventory_points=int(parts[1]),
            impact_points=int(parts[2]),
            half_width=float(parts[3]),
        )
    except ValueError as exc:
        raise ConfigError([f"--grid: {exc}"]) from exc


def _load_config(args: argparse.Namespace) -> ScenarioConfig:
    if args.config is not None and args.preset is not None:
        raise ConfigError(["give either --config or --preset, not both"])
    if args.config is not None:
        cfg = ScenarioConfig.from_yaml(args.config)
    elif args.preset is not None:
        try:
            cfg = SCENARIO_PRESETS[args.preset]
        except KeyError:
            raise ConfigError(
                [f"--preset: unknown preset {args.preset!r} (choose from {sorted(SCENARIO_PRESETS)})"]
            ) from None
    else:
        raise ConfigError(["one of --config or --preset is required"])

    updates: dict = {}
    if getattr(args, "solver", None) is not None:
        updates["solver"] = args.solver
    if getattr(args, "path", None) is not None:
        updates["path"] = args.path
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "grid", None) is not None:
        updates["grid"] = _parse_grid_flag(args.grid)
    if updates:
        cfg = cfg.replace(**updates)
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="scenario YAML file")
    parser.add_argument("--preset", help="built-in scenario: " + ", ".join(sorted(SCENARIO_PRESETS)))
    parser.add_argument("--solver", choices=scenarios.SOLVERS, help="override the configured solver")
    parser.add_argument("--path", help="override the price path: mean, up, down, or bump:<step>:<+|->")
    parser.add_argument("--seed", type=int, help="override the configured seed")
    parser.add_argument("--grid", help="override grid sizes as Kf,Kx,Ki,z")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for batched runs")


def _cmd_solve(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = scenarios.run_scenario(cfg, args.out, dump=args.dump)
    trades = result.schedule.trades
    print(f"solver: {cfg.solver}")
    print(f"trades: {np.array2string(trades, precision=6, suppress_small=True)}")
    print(f"total:  {result.schedule.total():.12g}")
    print(f"files:  {Path(args.out) / 'schedule.csv'}")
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v]
    except ValueError as exc:
        raise ConfigError([f"--values: {exc}"]) from exc
    if not values:
        raise ConfigError(["--values: at least one value required"])
    schedules = scenarios.sweep(cfg, args.param, values, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = scenarios.sweep_long_table(schedules, args.param, cfg.horizon)
    scenarios._write_csv(out / "sweep.csv", ("series", "step", "time", "trade"), rows)
    for value, schedule in schedules.items():
        name = f"schedule_{args.param}_{value:g}.csv".replace("/", "_")
        prob = scenarios.apply_parameter(cfg, args.param, value).build_problem()
        trace = [
            {"step": n, "time": n * prob.dt, "trade": float(t)}
            for n, t in enumerate(schedule.trades)
        ]
        scenarios._write_csv(out / name, ("step", "time", "trade"), trace)
        print(f"{args.param}={value:g}: first {schedule.trades[0]:.6f} last {schedule.trades[-1]:.6f}")
    print(f"long table: {out / 'sweep.csv'}")
    return EXIT_OK


def _cmd_compare(args: argparse.Namespace) -> int:
    a = scenarios.read_schedule_csv(args.schedule_a)
    b = scenarios.read_schedule_csv(args.schedule_b)
    order_size = args.order_size if args.order_size is not None else a.total()
    report = scenarios.compare_schedules(a, b, order_size)
    print(f"mean abs difference: {report.mean_bps:.3f} bps of order")
    print(f"max abs difference:  {report.max_bps:.3f} bps of order")
    return EXIT_OK


def _cmd_fit_kernel(args: argparse.Namespace) -> int:
    target = PowerLawTarget(alpha=args.alpha, beta=args.beta, horizon=args.horizon)
    fit = fit_power_law(
        target, args.terms, grid_size=args.grid_size, n_starts=args.starts, seed=args.seed
    )
    print(f"weights: {fit.kernels.weights.tolist()}")
    print(f"rates:   {fit.kernels.rates.tolist()}")
    print(f"residual RMS: {fit.residual_rms:.6g}")
    if args.out is not None:
        payload = {"kernels": fit.kernels.to_dict()}
        with open(args.out, "w") as fh:
            yaml.safe_dump(payload, fh, sort_keys=True)
        print(f"written: {args.out}")
    return EXIT_OK


def _cmd_check(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    sizes: list[tuple[int, int]] = []
    try:
        for chunk in args.grids.split(","):
            kf, ki = chunk.split(":")
            sizes.append((int(kf), int(ki)))
    except ValueError as exc:
        raise ConfigError([f"--grids: expected Kf:Ki pairs separated by commas, got {args.grids!r}"]) from exc
    rows = scenarios.consistency_check(cfg, sizes, threads=args.threads)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = ("price_points", "impact_points", "inventory_points", "mean_abs_error", "max_abs_error")
    scenarios._write_csv(out / "consistency.csv", columns, rows)
    widths = (12, 13, 16, 16, 16)
    print(" ".join(c.ljust(w) for c, w in zip(columns, widths)))
    for row in rows:
        print(" ".join(str(row[c])[:w].ljust(w) for c, w in zip(columns, widths)))
    print(f"table: {out / 'consistency.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ammexec",
        description="Optimal liquidation schedules on constant-product and two-layer AMMs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one scenario and write its artifacts")
    _add_common(p_solve)
    p_solve.add_argument("--dump", choices=("npz", "json"),
                         help="also dump the grid value tables for warm restart")
    p_solve.set_defaults(func=_cmd_solve)

    p_sweep = sub.add_parser("sweep", help="solve a scenario across one parameter's values")
    _add_common(p_sweep)
    p_sweep.add_argument("--param", required=True, choices=scenarios.SWEEPABLE)
    p_sweep.add_argument("--values", required=True, help="comma-separated parameter values")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cmp = sub.add_parser("compare", help="mean/max differences between two schedule files")
    p_cmp.add_argument("schedule_a")
    p_cmp.add_argument("schedule_b")
    p_cmp.add_argument("--order-size", type=float, help="normalization (default: sum of the first file)")
    p_cmp.set_defaults(func=_cmd_compare)

    p_fit = sub.add_parser("fit-kernel", help="fit exponential kernels to a power-law decay")
    p_fit.add_argument("--alpha", type=float, required=True)
    p_fit.add_argument("--beta", type=float, required=True)
    p_fit.add_argument("--terms", type=int, default=2, help="number of exponential terms")
    p_fit.add_argument("--horizon", type=float, default=1.0)
    p_fit.add_argument("--grid-size", type=int, default=200)
    p_fit.add_argument("--starts", type=int, default=10)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", help="write the fitted kernels to this YAML file")
    p_fit.set_defaults(func=_cmd_fit_kernel)

    p_chk = sub.add_parser("check", help="grid-resolution consistency table against a reference")
    _add_common(p_chk)
    p_chk.add_argument("--grids", required=True, help="comma-separated Kf:Ki pairs, e.g. 100:30,250:50")
    p_chk.set_defaults(func=_cmd_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DriftConditionError, ConcavityError, FitConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AmmExecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"file not found: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
