"""Scenario configuration, solver orchestration, comparison metrics, and file output.

A scenario is a YAML document with nested sections (problem, dynamics, pool,
kernels, solver, path, grid, seed). Three built-in presets reproduce the
standard study cases: a single exponential kernel, a fitted power-law kernel
pair, and a dominant permanent component. Outputs are plain CSV/JSON and are
bitwise deterministic given (config, seed); wall-clock timings never enter
the run artifacts.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import closed_form, dp, grid as grid_mod
from .core import ConstantProductPool, ExecutionProblem, GbmDynamics, Schedule, TwoLayerPool
from .errors import ConfigError
from .kernels import KernelSet, PowerLawTarget, fit_power_law

logger = logging.getLogger(__name__)

SOLVERS = ("closed_form", "dp_closed", "dp_open", "grid")
SWEEPABLE = ("sigma", "rho", "beta", "omega0", "N", "L", "L1", "s_bar")

SCHEDULE_COLUMNS = (
    "step", "time", "trade", "inventory_after", "cash_flow", "spot_before", "spot_after",
)


@dataclass(frozen=True)
class PowerLawSpec:
    alpha: float
    beta: float
    terms: int = 2


@dataclass(frozen=True)
class ScenarioConfig:
    horizon: float = 1.0
    steps: int = 10
    order_size: float = 1.0
    f0: float = 1.0
    mu: float = 0.0
    sigma: float = 0.3
    liquidity: float | None = 1000.0
    upper_liquidity: float | None = None
    lower_liquidity: float | None = None
    spread_bps: float | None = None
    weights: tuple[float, ...] | None = (1.0,)
    rates: tuple[float, ...] | None = (3.0,)
    power_law: PowerLawSpec | None = None
    solver: str = "closed_form"
    path: str | tuple[float, ...] = "mean"
    grid: grid_mod.GridConfig = field(default_factory=grid_mod.GridConfig)
    seed: int = 0

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        violations: list[str] = []
        known = {"problem", "dynamics", "pool", "kernels", "solver", "path", "grid", "seed"}
        for key in raw:
            if key not in known:
                violations.append(f"unknown section {key!r}")

        def section(name):
            value = raw.get(name, {})
            if value is None:
                value = {}
            if not isinstance(value, dict):
                violations.append(f"{name}: must be a mapping, got {type(value).__name__}")
                return {}
            return dict(value)

        problem = section("problem")
        dynamics = section("dynamics")
        pool = section("pool")
        kernels = section("kernels")
        grid_raw = section("grid")

        kwargs: dict = {}

        def take(sec: dict, sec_name: str, key: str, target: str, cast):
            if key in sec:
                try:
                    kwargs[target] = cast(sec.pop(key))
                except (TypeError, ValueError):
                    violations.append(f"{sec_name}.{key}: not a valid {cast.__name__}")

        take(problem, "problem", "horizon", "horizon", float)
        take(problem, "problem", "steps", "steps", int)
        take(problem, "problem", "order_size", "order_size", float)
        take(dynamics, "dynamics", "f0", "f0", float)
        take(dynamics, "dynamics", "mu", "mu", float)
        take(dynamics, "dynamics", "sigma", "sigma", float)

        if pool:
            if "liquidity" in pool and ("upper_liquidity" in pool or "lower_liquidity" in pool):
                violations.append("pool: give either liquidity or the two-layer fields, not both")
            kwargs["liquidity"] = None
            take(pool, "pool", "liquidity", "liquidity", float)
            take(pool, "pool", "upper_liquidity", "upper_liquidity", float)
            take(pool, "pool", "lower_liquidity", "lower_liquidity", float)
            take(pool, "pool", "spread_bps", "spread_bps", float)
        if kernels:
            kwargs["weights"] = None
            kwargs["rates"] = None
            if "power_law" in kernels:
                pl = kernels.pop("power_law") or {}
                try:
                    kwargs["power_law"] = PowerLawSpec(
                        alpha=float(pl.pop("alpha")),
                        beta=float(pl.pop("beta")),
                        terms=int(pl.pop("terms", 2)),
                    )
                except (KeyError, TypeError, ValueError):
                    violations.append("kernels.power_law: needs numeric alpha and beta")
                else:
                    for key in pl:
                        violations.append(f"kernels.power_law.{key}: unknown key")
            if "weights" in kernels or "rates" in kernels:
                try:
                    kwargs["weights"] = tuple(float(w) for w in kernels.pop("weights"))
                    kwargs["rates"] = tuple(float(r) for r in kernels.pop("rates"))
                except (KeyError, TypeError, ValueError):
                    violations.append("kernels: weights and rates must both be numeric lists")
        if "solver" in raw:
            kwargs["solver"] = str(raw["solver"])
        if "path" in raw:
            p = raw["path"]
            kwargs["path"] = tuple(float(v) for v in p) if isinstance(p, (list, tuple)) else str(p)
        if grid_raw:
            try:
                kwargs["grid"] = grid_mod.GridConfig(
                    price_points=int(grid_raw.pop("price_points", 500)),
                    inventory_points=int(grid_raw.pop("inventory_points", 250)),
                    impact_points=int(grid_raw.pop("impact_points", 500)),
                    half_width=float(grid_raw.pop("half_width", 3.0)),
                )
            except (TypeError, ValueError) as exc:
                violations.append(f"grid: {exc}")
        if "seed" in raw:
            try:
                kwargs["seed"] = int(raw["seed"])
            except (TypeError, ValueError):
                violations.append("seed: not a valid integer")

        for sec_name, sec in (("problem", problem), ("dynamics", dynamics),
                              ("pool", pool), ("kernels", kernels), ("grid", grid_raw)):
            for key in sec:
                violations.append(f"{sec_name}.{key}: unknown key")

        if violations:
            raise ConfigError(violations)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def from_yaml(cls, path: str | Path) -> "ScenarioConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh)
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError([f"top level must be a mapping, got {type(raw).__name__}"])
        return cls.from_dict(raw)

    def replace(self, **updates) -> "ScenarioConfig":
        cfg = dataclasses.replace(self, **updates)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {
            "problem": {"horizon": self.horizon, "steps": self.steps, "order_size": self.order_size},
            "dynamics": {"f0": self.f0, "mu": self.mu, "sigma": self.sigma},
            "solver": self.solver,
            "path": list(self.path) if isinstance(self.path, tuple) else self.path,
            "seed": self.seed,
            "grid": {
                "price_points": self.grid.price_points,
                "inventory_points": self.grid.inventory_points,
                "impact_points": self.grid.impact_points,
                "half_width": self.grid.half_width,
            },
        }
        if self.is_two_layer:
            out["pool"] = {
                "upper_liquidity": self.upper_liquidity,
                "lower_liquidity": self.lower_liquidity,
                "spread_bps": self.spread_bps,
            }
        else:
            out["pool"] = {"liquidity": self.liquidity}
        if self.power_law is not None:
            out["kernels"] = {"power_law": dataclasses.asdict(self.power_law)}
        else:
            out["kernels"] = {"weights": list(self.weights), "rates": list(self.rates)}
        return out

    # -- validation --------------------------------------------------------

    @property
    def is_two_layer(self) -> bool:
        return self.upper_liquidity is not None or self.lower_liquidity is not None

    def validate(self) -> None:
        v: list[str] = []
        if not self.horizon > 0:
            v.append(f"problem.horizon: must be positive, got {self.horizon}")
        if self.steps < 1:
            v.append(f"problem.steps: must be at least 1, got {self.steps}")
        if not self.f0 > 0:
            v.append(f"dynamics.f0: must be positive, got {self.f0}")
        if self.sigma < 0:
            v.append(f"dynamics.sigma: must be nonnegative, got {self.sigma}")

        if self.is_two_layer:
            if self.liquidity is not None:
                v.append("pool: give either liquidity or the two-layer fields, not both")
            if self.upper_liquidity is None or not self.upper_liquidity > 0:
                v.append(f"pool.upper_liquidity: must be positive, got {self.upper_liquidity}")
            if self.lower_liquidity is None or not self.lower_liquidity > 0:
                v.append(f"pool.lower_liquidity: must be positive, got {self.lower_liquidity}")
            if self.spread_bps is None:
                v.append("pool.spread_bps: required for a two-layer pool")
            elif self.f0 * (1.0 + self.spread_bps * 1e-4) <= 0:
                v.append(f"pool.spread_bps: threshold must stay positive, got {self.spread_bps}")
            if self.solver != "grid":
                v.append(f"solver: a two-layer pool requires the grid solver, got {self.solver!r}")
        elif self.liquidity is None or not self.liquidity > 0:
            v.append(f"pool.liquidity: must be positive, got {self.liquidity}")

        has_explicit = self.weights is not None or self.rates is not None
        if has_explicit == (self.power_law is not None):
            v.append("kernels: give exactly one of weights/rates or power_law")
        if has_explicit:
            try:
                KernelSet(np.asarray(self.weights, float), np.asarray(self.rates, float))
            except (TypeError, ValueError) as exc:
                v.append(f"kernels: {exc}")
        if self.power_law is not None:
            if self.power_law.alpha < 0:
                v.append(f"kernels.power_law.alpha: must be nonnegative, got {self.power_law.alpha}")
            if self.power_law.beta < 0:
                v.append(f"kernels.power_law.beta: must be nonnegative, got {self.power_law.beta}")
            if self.power_law.terms < 1:
                v.append(f"kernels.power_law.terms: must be at least 1, got {self.power_law.terms}")

        if self.solver not in SOLVERS:
            v.append(f"solver: must be one of {SOLVERS}, got {self.solver!r}")
        if self.solver == "grid" and self.mu != 0.0:
            v.append(f"solver: the grid solver requires zero drift, got mu={self.mu}")

        if isinstance(self.path, tuple):
            if len(self.path) != self.steps + 1:
                v.append(f"path: explicit path needs {self.steps + 1} values, got {len(self.path)}")
            elif any(p <= 0 for p in self.path):
                v.append("path: explicit path values must be positive")
        elif self.path not in ("mean", "up", "down"):
            parts = str(self.path).split(":")
            ok = (
                len(parts) == 3
                and parts[0] == "bump"
                and parts[1].isdigit()
                and 0 <= int(parts[1]) <= self.steps
                and parts[2] in ("+", "-")
            )
            if not ok:
                v.append(
                    f"path: must be mean, up, down, bump:<step>:<+|->, or an explicit list; got {self.path!r}"
                )
        if self.seed < 0:
            v.append(f"seed: must be nonnegative, got {self.seed}")
        if v:
            raise ConfigError(v)

    # -- resolution ---------------------------------------------------------

    def build_problem(self) -> ExecutionProblem:
        return ExecutionProblem(self.horizon, self.steps, self.order_size)

    def build_dynamics(self) -> GbmDynamics:
        return GbmDynamics(self.f0, self.mu, self.sigma)

    def build_pool(self) -> ConstantProductPool | TwoLayerPool:
        if self.is_two_layer:
            threshold = self.f0 * (1.0 + self.spread_bps * 1e-4)
            return TwoLayerPool(self.upper_liquidity, self.lower_liquidity, threshold)
        return ConstantProductPool(self.liquidity)

    def resolve_kernels(self) -> tuple[KernelSet, float | None]:
        """Kernel set plus the fit residual RMS when a power-law fit ran."""
        if self.power_law is None:
            return KernelSet(np.asarray(self.weights, float), np.asarray(self.rates, float)), None
        target = PowerLawTarget(self.power_law.alpha, self.power_law.beta, self.horizon)
        fit = fit_power_law(target, self.power_law.terms, seed=self.seed)
        logger.info(
            "fitted %d kernels to power-law decay: residual RMS %.4g",
            self.power_law.terms, fit.residual_rms,
        )
        return fit.kernels, fit.residual_rms

    def resolve_path(self) -> np.ndarray:
        dyn, prob = self.build_dynamics(), self.build_problem()
        if isinstance(self.path, tuple):
            return np.asarray(self.path, dtype=float)
        if self.path == "mean":
            return dp.mean_price_path(dyn, prob)
        if self.path == "up":
            return dp.three_sigma_path(dyn, prob, +1)
        if self.path == "down":
            return dp.three_sigma_path(dyn, prob, -1)
        _, step, sign = str(self.path).split(":")
        return dp.bumped_path(dyn, prob, int(step), +1 if sign == "+" else -1)


SCENARIO_PRESETS: dict[str, ScenarioConfig] = {
    # Single exponential kernel.
    "exp-kernel": ScenarioConfig(weights=(1.0,), rates=(3.0,)),
    # Power-law decay approximated by two fitted exponentials.
    "power-law": ScenarioConfig(weights=None, rates=None,
                                power_law=PowerLawSpec(alpha=10.0, beta=0.8, terms=2)),
    # Dominant permanent impact with a light fast-decaying component.
    "permanent": ScenarioConfig(weights=(0.99, 0.01), rates=(0.0, 5.0)),
}


# -- solving ----------------------------------------------------------------


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    schedule: Schedule
    path: np.ndarray
    kernels: KernelSet
    fit_residual_rms: float | None
    diagnostics: dict


def solve_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    """Resolve and run the configured solver; deterministic given (config, seed)."""
    prob = cfg.build_problem()
    dyn = cfg.build_dynamics()
    pool = cfg.build_pool()
    kernels, fit_rms = cfg.resolve_kernels()
    path = cfg.resolve_path()
    diagnostics: dict = {"solver": cfg.solver}

    if cfg.solver == "closed_form":
        schedule = closed_form.optimal_schedule(dyn, kernels, prob, pool)
    elif cfg.solver == "dp_closed":
        coeffs = dp.closed_loop_coefficients(dyn, kernels, prob, pool)
        schedule = dp.simulate_closed_loop(coeffs, path, prob, pool, kernels)
    elif cfg.solver == "dp_open":
        coeffs = dp.open_loop_coefficients(dyn, kernels, prob, pool)
        schedule = dp.open_loop_schedule(coeffs, dyn, prob, pool, kernels)
    elif cfg.solver == "grid":
        if isinstance(pool, ConstantProductPool):
            pool = TwoLayerPool(pool.liquidity, pool.liquidity, cfg.f0)
        solution = grid_mod.solve_grid(cfg.grid, dyn, prob, kernels, pool)
        schedule = grid_mod.evaluate_policy(solution, path)
        diagnostics["impact_saturations"] = solution.diagnostics.impact_saturations
        diagnostics["price_saturations"] = solution.diagnostics.price_saturations
        diagnostics["candidate_evaluations"] = solution.diagnostics.candidate_evaluations
        diagnostics["grid_solution"] = solution
    else:  # pragma: no cover - guarded by validation
        raise ConfigError([f"solver: unknown solver {cfg.solver!r}"])

    schedule.check_volume(prob.order_size)
    if cfg.solver == "grid" and (schedule.trades < 0).any():
        raise AssertionError("grid schedules must be nonnegative")
    return ScenarioResult(cfg, schedule, path, kernels, fit_rms, diagnostics)


def trace_schedule(
    schedule: Schedule,
    path: np.ndarray,
    kernels: KernelSet,
    pool: ConstantProductPool | TwoLayerPool,
    prob: ExecutionProblem,
) -> list[dict]:
    """Replay a schedule along a fundamental path, recording per-step economics.

    Spot-before is the impacted price entering the step; spot-after adds the
    step's own (pre-decay) impact increment.
    """
    dt = prob.dt
    decay = np.exp(-kernels.rates * dt)
    impacts = np.zeros(len(kernels))
    inventory = prob.order_size
    rows = []
    two_layer = isinstance(pool, TwoLayerPool)
    for n, delta in enumerate(schedule.trades):
        f = float(path[n])
        root = math.sqrt(f)
        drag = float(kernels.weights @ impacts)
        spot_before = f * (1.0 - drag)
        if two_layer:
            state = grid_mod.SpotState(f, impacts)
            cash = grid_mod.two_layer_cashflow(pool, state, kernels, delta)
            new_impacts = grid_mod.two_layer_impact_update(pool, state, kernels, delta, dt)
            increment = float(kernels.weights @ (new_impacts / decay - impacts))
        else:
            liq = pool.liquidity
            cash = delta * f * (1.0 - drag - delta * root / liq)
            increment = 2.0 * delta * root / liq
            new_impacts = decay * (impacts + increment)
        spot_after = f * (1.0 - drag - increment)
        inventory -= delta
        rows.append({
            "step": n,
            "time": n * dt,
            "trade": float(delta),
            "inventory_after": float(inventory),
            "cash_flow": float(cash),
            "spot_before": float(spot_before),
            "spot_after": float(spot_after),
        })
        impacts = new_impacts
    return rows


# -- comparison ---------------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    """Mean and max absolute per-step differences, in basis points of the order."""

    mean_bps: float
    max_bps: float
    diffs: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {"mean_bps": self.mean_bps, "max_bps": self.max_bps, "diffs": self.diffs.tolist()}


def compare_schedules(a: Schedule, b: Schedule, order_size: float) -> ComparisonReport:
    if len(a) != len(b):
        raise ValueError(f"schedules have different lengths: {len(a)} vs {len(b)}")
    diffs = np.abs(a.trades - b.trades)
    scale = 1e4 / abs(order_size)
    return ComparisonReport(float(diffs.mean() * scale), float(diffs.max() * scale), diffs)


# -- sweeps -------------------------------------------------------------------


def apply_parameter(cfg: ScenarioConfig, parameter: str, value: float) -> ScenarioConfig:
    """New config with one swept parameter applied."""
    if parameter == "sigma":
        return cfg.replace(sigma=float(value))
    if parameter == "rho":
        if cfg.rates is None or len(cfg.rates) != 1:
            raise ConfigError(["sweep rho: needs an explicit single-kernel config"])
        return cfg.replace(rates=(float(value),))
    if parameter == "beta":
        if cfg.power_law is None:
            raise ConfigError(["sweep beta: needs a power-law kernel config"])
        return cfg.replace(power_law=dataclasses.replace(cfg.power_law, beta=float(value)))
    if parameter == "omega0":
        if cfg.weights is None or len(cfg.weights) != 2:
            raise ConfigError(["sweep omega0: needs an explicit two-kernel config"])
        if not 0.0 <= value <= 1.0:
            raise ConfigError([f"sweep omega0: value must lie in [0, 1], got {value}"])
        return cfg.replace(weights=(float(value), 1.0 - float(value)))
    if parameter == "N":
        return cfg.replace(steps=int(value))
    if parameter == "L":
        if cfg.is_two_layer:
            raise ConfigError(["sweep L: needs a single-liquidity pool"])
        return cfg.replace(liquidity=float(value))
    if parameter == "L1":
        if not cfg.is_two_layer:
            raise ConfigError(["sweep L1: needs a two-layer pool"])
        return cfg.replace(lower_liquidity=float(value))
    if parameter == "s_bar":
        if not cfg.is_two_layer:
            raise ConfigError(["sweep s_bar: needs a two-layer pool"])
        return cfg.replace(spread_bps=float(value))
    raise ConfigError([f"sweep: unknown parameter {parameter!r} (choose from {SWEEPABLE})"])


def sweep(
    cfg: ScenarioConfig,
    parameter: str,
    values: list[float],
    threads: int = 1,
) -> dict[float, Schedule]:
    """One schedule per parameter value; runs values in a thread pool."""
    configs = [apply_parameter(cfg, parameter, v) for v in values]
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve_scenario, configs))
    else:
        results = [solve_scenario(c) for c in configs]
    return {v: r.schedule for v, r in zip(values, results)}


def sweep_long_table(schedules: dict[float, Schedule], parameter: str, horizon: float) -> list[dict]:
    """Long-format rows (series, x, y) ready for any plotting tool."""
    rows = []
    for value, schedule in schedules.items():
        n_steps = len(schedule) - 1
        for n, trade in enumerate(schedule.trades):
            rows.append({
                "series": f"{parameter}={value:g}",
                "step": n,
                "time": n * horizon / n_steps,
                "trade": float(trade),
            })
    return rows


# -- consistency tables ---------------------------------------------------------


def consistency_check(
    cfg: ScenarioConfig,
    grid_sizes: list[tuple[int, int]],
    threads: int = 1,
) -> list[dict]:
    """Mean/max absolute schedule error per (price_points, impact_points) pair.

    A degenerate (equal-liquidity or single-liquidity) config is checked
    against the backward-recursion mean-path schedule; a genuine two-layer
    config against the high-resolution grid reference from ``cfg.grid``.
    """
    base = cfg if cfg.solver == "grid" else cfg.replace(solver="grid")
    degenerate = (not base.is_two_layer) or base.upper_liquidity == base.lower_liquidity
    if degenerate:
        v2 = base.replace(
            solver="dp_closed",
            liquidity=base.liquidity if not base.is_two_layer else base.upper_liquidity,
            upper_liquidity=None, lower_liquidity=None, spread_bps=None,
        )
        reference = solve_scenario(v2).schedule
    else:
        reference = solve_scenario(base).schedule

    def run(sizes: tuple[int, int]) -> dict:
        kf, ki = sizes
        sub = base.replace(grid=dataclasses.replace(base.grid, price_points=kf, impact_points=ki))
        schedule = solve_scenario(sub).schedule
        diffs = np.abs(schedule.trades - reference.trades)
        return {
            "price_points": kf,
            "impact_points": ki,
            "inventory_points": base.grid.inventory_points,
            "mean_abs_error": float(diffs.mean()),
            "max_abs_error": float(diffs.max()),
        }

    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, grid_sizes))
    return [run(s) for s in grid_sizes]


# -- file output ------------------------------------------------------------------


def _write_csv(path: Path, columns: tuple[str, ...], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


def read_schedule_csv(path: str | Path) -> Schedule:
    """Parse a schedule file back into the exact in-memory trades."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        trades = [float(row["trade"]) for row in reader]
    return Schedule(np.asarray(trades))


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path, dump: str | None = None) -> ScenarioResult:
    """Solve one scenario and write schedule.csv, inventory.csv, diagnostics.json.

    ``dump`` optionally serializes a grid solution ('npz' or 'json') for warm
    restart of the policy evaluation.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = solve_scenario(cfg)
    prob = cfg.build_problem()
    pool = cfg.build_pool()
    if cfg.solver == "grid" and isinstance(pool, ConstantProductPool):
        pool = TwoLayerPool(pool.liquidity, pool.liquidity, cfg.f0)

    rows = trace_schedule(result.schedule, result.path, result.kernels, pool, prob)
    _write_csv(out / "schedule.csv", SCHEDULE_COLUMNS, rows)

    inventory_rows = []
    inventory = prob.order_size
    for row in rows:
        inventory_rows.append({
            "step": row["step"],
            "time": row["time"],
            "inventory_before": float(inventory),
            "inventory_after": row["inventory_after"],
        })
        inventory = row["inventory_after"]
    _write_csv(out / "inventory.csv",
               ("step", "time", "inventory_before", "inventory_after"), inventory_rows)

    diagnostics = {
        "config": cfg.to_dict(),
        "kernels": result.kernels.to_dict(),
        "fit_residual_rms": result.fit_residual_rms,
        "total_volume": result.schedule.total(),
        "expected_negative_trades": int((result.schedule.trades < 0).sum()),
        "solver": cfg.solver,
    }
    for key in ("impact_saturations", "price_saturations", "candidate_evaluations"):
        if key in result.diagnostics:
            diagnostics[key] = result.diagnostics[key]
    with open(out / "diagnostics.json", "w") as fh:
        json.dump(diagnostics, fh, sort_keys=True, indent=2)

    if dump is not None:
        solution = result.diagnostics.get("grid_solution")
        if solution is None:
            raise ConfigError(["--dump: only grid-solver runs produce a value grid to dump"])
        suffix = "npz" if dump == "npz" else "json"
        solution.save(str(out / f"value_grid.{suffix}"), fmt=dump)

    logger.info("scenario written to %s", out)
    return result
