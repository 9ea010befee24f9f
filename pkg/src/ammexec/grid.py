"""Grid-based backward induction for the two-layer liquidity pool.

The value function is tabulated over (inventory, cumulative impacts,
fundamental price). Candidate trades are drawn from the inventory grid, which
enforces non-negativity and keeps post-trade inventory exactly on the grid;
continuation values are therefore interpolated over the impact dimensions
only, and the price expectation is a row of precomputed lognormal transition
weights. Buy orders are excluded by construction, so the solver is restricted
to zero drift.

Internally all tables use a price-major layout (inventory, price, impacts)
with the flattened impact multi-index last, which keeps the interpolation
reads contiguous inside the jitted sweep.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.stats import norm

from .core import ExecutionProblem, GbmDynamics, Schedule, TwoLayerPool
from .kernels import KernelSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridConfig:
    """Grid resolution: node counts per axis and price-grid half width.

    ``price_points = 0`` selects a degenerate single-node price grid, the
    only mode compatible with zero volatility.
    """

    price_points: int = 500
    inventory_points: int = 250
    impact_points: int = 500
    half_width: float = 3.0

    def __post_init__(self):
        if self.price_points != 0 and self.price_points < 2:
            raise ValueError(f"price_points must be 0 or at least 2, got {self.price_points}")
        if self.inventory_points < 2:
            raise ValueError(f"inventory_points must be at least 2, got {self.inventory_points}")
        if self.impact_points < 2:
            raise ValueError(f"impact_points must be at least 2, got {self.impact_points}")
        if not self.half_width > 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")


@dataclass(frozen=True)
class GridAxes:
    """Discretization produced by :func:`build_grid_axes`."""

    log_prices: np.ndarray      # (Kf+1,)
    prices: np.ndarray          # (Kf+1,)
    log_midpoints: np.ndarray   # (Kf+2,), -inf and +inf at the ends
    inventories: np.ndarray     # (Kx+1,), 0 .. order size
    impact_grids: np.ndarray    # (J+1, Ki+1), per-kernel uniform grids from 0
    impact_steps: np.ndarray    # (J+1,) grid spacings


@dataclass(frozen=True)
class SpotState:
    """Fundamental price and per-kernel cumulative impacts at one step."""

    fundamental: float
    impacts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "impacts", np.atleast_1d(np.asarray(self.impacts, dtype=float)))
        if not self.fundamental > 0:
            raise ValueError(f"fundamental must be positive, got {self.fundamental}")

    def spot(self, kernels: KernelSet) -> float:
        """Impacted spot price f * (1 - sum_j w_j I_j)."""
        return self.fundamental * (1.0 - float(kernels.weights @ self.impacts))


@dataclass
class GridDiagnostics:
    """Counters and timings accumulated during a solve or policy evaluation."""

    step_seconds: list[float] = field(default_factory=list)
    impact_saturations: int = 0
    price_saturations: int = 0
    candidate_evaluations: int = 0


@dataclass
class GridSolution:
    """Policies (and optionally values) tabulated per time step.

    ``policies[n][kx, kf, flat_impact]`` is the index of the optimal candidate
    trade on the inventory grid. Value tables are retained only when small
    enough or explicitly requested; the terminal layer always equals the
    liquidate-everything cash-flow.
    """

    config: GridConfig
    axes: GridAxes
    policies: list[np.ndarray]
    values: list[np.ndarray] | None
    initial_values: np.ndarray
    diagnostics: GridDiagnostics
    order_size: float
    dt: float
    weights: np.ndarray
    rates: np.ndarray
    upper_liquidity: float
    lower_liquidity: float
    threshold: float

    def save(self, path: str, fmt: str = "npz") -> None:
        """Dump policies, axes, and diagnostics for warm restart.

        ``fmt='npz'`` writes a compressed binary archive; ``fmt='json'``
        writes structured text (only sensible for small grids).
        """
        header = {
            "price_points": self.config.price_points,
            "inventory_points": self.config.inventory_points,
            "impact_points": self.config.impact_points,
            "half_width": self.config.half_width,
            "order_size": self.order_size,
            "dt": self.dt,
            "weights": self.weights.tolist(),
            "rates": self.rates.tolist(),
            "upper_liquidity": self.upper_liquidity,
            "lower_liquidity": self.lower_liquidity,
            "threshold": self.threshold,
            "impact_saturations": self.diagnostics.impact_saturations,
            "price_saturations": self.diagnostics.price_saturations,
            "candidate_evaluations": self.diagnostics.candidate_evaluations,
            "step_seconds": self.diagnostics.step_seconds,
        }
        if fmt == "npz":
            arrays = {f"policy_{n}": p for n, p in enumerate(self.policies)}
            np.savez_compressed(
                path,
                header=json.dumps(header, sort_keys=True),
                n_steps=len(self.policies),
                log_prices=self.axes.log_prices,
                inventories=self.axes.inventories,
                impact_grids=self.axes.impact_grids,
                initial_values=self.initial_values,
                **arrays,
            )
        elif fmt == "json":
            payload = {
                "header": header,
                "log_prices": self.axes.log_prices.tolist(),
                "inventories": self.axes.inventories.tolist(),
                "impact_grids": self.axes.impact_grids.tolist(),
                "initial_values": self.initial_values.tolist(),
                "policies": [p.tolist() for p in self.policies],
            }
            with open(path, "w") as fh:
                json.dump(payload, fh, sort_keys=True)
        else:
            raise ValueError(f"unknown dump format {fmt!r} (use 'npz' or 'json')")

    @classmethod
    def load(cls, path: str, fmt: str = "npz") -> "GridSolution":
        if fmt == "npz":
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data["header"]))
                n_steps = int(data["n_steps"])
                policies = [data[f"policy_{n}"] for n in range(n_steps)]
                log_prices = data["log_prices"]
                inventories = data["inventories"]
                impact_grids = data["impact_grids"]
                initial_values = data["initial_values"]
        elif fmt == "json":
            with open(path) as fh:
                payload = json.load(fh)
            header = payload["header"]
            log_prices = np.asarray(payload["log_prices"])
            inventories = np.asarray(payload["inventories"])
            impact_grids = np.asarray(payload["impact_grids"])
            initial_values = np.asarray(payload["initial_values"])
            policies = [np.asarray(p) for p in payload["policies"]]
        else:
            raise ValueError(f"unknown dump format {fmt!r} (use 'npz' or 'json')")
        config = GridConfig(
            price_points=header["price_points"],
            inventory_points=header["inventory_points"],
            impact_points=header["impact_points"],
            half_width=header["half_width"],
        )
        mids = np.empty(len(log_prices) + 1)
        mids[0], mids[-1] = -np.inf, np.inf
        mids[1:-1] = 0.5 * (log_prices[:-1] + log_prices[1:])
        axes = GridAxes(
            log_prices=log_prices,
            prices=np.exp(log_prices),
            log_midpoints=mids,
            inventories=inventories,
            impact_grids=impact_grids,
            impact_steps=impact_grids[:, 1] - impact_grids[:, 0],
        )
        diag = GridDiagnostics(
            step_seconds=list(header["step_seconds"]),
            impact_saturations=header["impact_saturations"],
            price_saturations=header["price_saturations"],
            candidate_evaluations=header["candidate_evaluations"],
        )
        return cls(
            config=config,
            axes=axes,
            policies=policies,
            values=None,
            initial_values=initial_values,
            diagnostics=diag,
            order_size=header["order_size"],
            dt=header["dt"],
            weights=np.asarray(header["weights"]),
            rates=np.asarray(header["rates"]),
            upper_liquidity=header["upper_liquidity"],
            lower_liquidity=header["lower_liquidity"],
            threshold=header["threshold"],
        )


def build_grid_axes(
    config: GridConfig,
    dyn: GbmDynamics,
    prob: ExecutionProblem,
    kernels: KernelSet,
    pool: TwoLayerPool,
) -> GridAxes:
    """Build price, inventory, and per-kernel impact grids.

    The price grid is log-uniform, centred on the terminal log-price mode and
    spanning ``half_width`` terminal standard deviations; the impact grids
    cover one decayed full-order impact at the worst price and liquidity.
    """
    if dyn.sigma == 0 and config.price_points != 0:
        raise ValueError(
            "zero volatility degenerates the price grid; use price_points=0 for the single-node mode"
        )
    kf = config.price_points
    mode = math.log(dyn.f0) + (dyn.mu - 0.5 * dyn.sigma**2) * prob.horizon
    spread = dyn.sigma * math.sqrt(prob.horizon)
    if kf == 0:
        log_prices = np.array([mode])
    else:
        k = np.arange(kf + 1)
        log_prices = mode + config.half_width * spread * (2.0 * k - kf) / kf
    mids = np.empty(len(log_prices) + 1)
    mids[0], mids[-1] = -np.inf, np.inf
    mids[1:-1] = 0.5 * (log_prices[:-1] + log_prices[1:])

    inventories = np.arange(config.inventory_points + 1) * prob.order_size / config.inventory_points

    top_price = math.exp(log_prices[-1])
    scale = 2.0 * prob.order_size * math.sqrt(top_price) / pool.lower_liquidity
    per_kernel = np.exp(-kernels.rates * prob.dt) * scale / config.impact_points
    impact_grids = per_kernel[:, None] * np.arange(config.impact_points + 1)[None, :]

    return GridAxes(
        log_prices=log_prices,
        prices=np.exp(log_prices),
        log_midpoints=mids,
        inventories=inventories,
        impact_grids=impact_grids,
        impact_steps=per_kernel,
    )


def transition_matrix(axes: GridAxes, dyn: GbmDynamics, dt: float) -> np.ndarray:
    """One-step lognormal transition weights between price grid nodes.

    Row k holds normal CDF differences over the log-midpoint cells around the
    conditional mean log(f_k) + (mu - sigma^2/2)*dt; the open-ended boundary
    cells absorb both tails, so every row sums to one exactly.
    """
    scale = dyn.sigma * math.sqrt(dt)
    centers = axes.log_prices + (dyn.mu - 0.5 * dyn.sigma**2) * dt
    n = len(axes.log_prices)
    if scale == 0.0:
        # Deterministic step: all mass on the node nearest the drifted price.
        target = np.abs(axes.log_prices[None, :] - centers[:, None]).argmin(axis=1)
        out = np.zeros((n, n))
        out[np.arange(n), target] = 1.0
        return out
    z = (axes.log_midpoints[None, :] - centers[:, None]) / scale
    cdf = norm.cdf(z)
    return cdf[:, 1:] - cdf[:, :-1]


def threshold_crossing_trade(pool: TwoLayerPool, fundamental: float, spot: float) -> float:
    """Trade size whose first-order impact moves the spot exactly to the threshold.

    Only defined while the spot sits above the threshold.
    """
    if not spot > pool.threshold:
        raise ValueError(
            f"spot {spot} must exceed the threshold {pool.threshold} for a crossing trade"
        )
    return pool.upper_liquidity * (spot - pool.threshold) / (2.0 * fundamental * math.sqrt(fundamental))


def two_layer_cashflow(
    pool: TwoLayerPool,
    state: SpotState,
    kernels: KernelSet,
    delta: float,
) -> float:
    """Proceeds of selling ``delta`` in the current liquidity regime.

    Three branches: entirely below the threshold (lower liquidity), entirely
    above (upper liquidity), or a crossing trade split at the threshold with
    the tail leg priced off the threshold itself. Equal layers bypass the
    split entirely and reproduce single-layer proceeds for every input.
    """
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    f = state.fundamental
    root = math.sqrt(f)
    drag = float(kernels.weights @ state.impacts)
    if pool.is_degenerate:
        return delta * f * (1.0 - drag - delta * root / pool.lower_liquidity)
    spot = f * (1.0 - drag)
    if spot <= pool.threshold:
        return delta * f * (1.0 - drag - delta * root / pool.lower_liquidity)
    crossing = threshold_crossing_trade(pool, f, spot)
    if delta <= crossing:
        return delta * f * (1.0 - drag - delta * root / pool.upper_liquidity)
    tail = delta - crossing
    pbar = pool.threshold
    return (
        crossing * f * (1.0 - drag - crossing * root / pool.upper_liquidity)
        + tail * pbar * (1.0 - drag - tail * math.sqrt(pbar) / pool.lower_liquidity)
    )


def two_layer_impact_update(
    pool: TwoLayerPool,
    state: SpotState,
    kernels: KernelSet,
    delta: float,
    dt: float,
) -> np.ndarray:
    """Next-step cumulative impacts after selling ``delta``; regime logic as the cash-flow."""
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    f = state.fundamental
    root = math.sqrt(f)
    decay = np.exp(-kernels.rates * dt)
    if pool.is_degenerate:
        return decay * (state.impacts + 2.0 * delta * root / pool.lower_liquidity)
    spot = f * (1.0 - float(kernels.weights @ state.impacts))
    if spot <= pool.threshold:
        increment = 2.0 * delta * root / pool.lower_liquidity
    else:
        crossing = threshold_crossing_trade(pool, f, spot)
        if delta <= crossing:
            increment = 2.0 * delta * root / pool.upper_liquidity
        else:
            increment = (
                2.0 * crossing * root / pool.upper_liquidity
                + 2.0 * (delta - crossing) * math.sqrt(pool.threshold) / pool.lower_liquidity
            )
    return decay * (state.impacts + increment)


def _impact_flat_values(axes: GridAxes) -> np.ndarray:
    """Per-kernel impact values over the flattened impact multi-index, shape (J+1, nM)."""
    grids = [axes.impact_grids[j] for j in range(axes.impact_grids.shape[0])]
    mesh = np.meshgrid(*grids, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh])


def _candidate_tables(delta, prices, iota, impact_flat, pool, kernels, dt, axes):
    """Cash-flow and interpolation tables for one candidate trade over a (price x impact) slab.

    Returns (cash, base, fractions, saturated) where ``base`` is the flat
    index of the lower interpolation corner and ``fractions`` the per-axis
    interpolation weights.
    """
    n_axes, n_flat = impact_flat.shape
    f = prices[:, None]
    root = np.sqrt(f)
    drag = iota[None, :]
    l0, l1, pbar = pool.upper_liquidity, pool.lower_liquidity, pool.threshold
    if pool.is_degenerate:
        cash = delta * f * (1.0 - drag - delta * root / l1)
        increment = np.broadcast_to(2.0 * delta * root / l1, (len(prices), n_flat))
        increments = [increment] * n_axes
    else:
        spot = f * (1.0 - drag)
        below = spot <= pbar
        crossing = l0 * (spot - pbar) / (2.0 * f * root)
        crosses = ~below & (delta > crossing)
        above = ~below & ~crosses
        tail = delta - crossing
        cash = np.where(below, delta * f * (1.0 - drag - delta * root / l1), 0.0)
        cash = np.where(above, delta * f * (1.0 - drag - delta * root / l0), cash)
        cash_cross = (
            crossing * f * (1.0 - drag - crossing * root / l0)
            + tail * pbar * (1.0 - drag - tail * math.sqrt(pbar) / l1)
        )
        cash = np.where(crosses, cash_cross, cash)
        increment = np.where(below, 2.0 * delta * root / l1, 0.0)
        increment = np.where(above, 2.0 * delta * root / l0, increment)
        increment = np.where(
            crosses,
            2.0 * crossing * root / l0 + 2.0 * tail * math.sqrt(pbar) / l1,
            increment,
        )
        increments = [increment] * n_axes

    n_impact = axes.impact_grids.shape[1] - 1
    strides = np.empty(n_axes, dtype=np.int64)
    strides[-1] = 1
    for ax in range(n_axes - 2, -1, -1):
        strides[ax] = strides[ax + 1] * (n_impact + 1)

    base = np.zeros((len(prices), n_flat), dtype=np.int64)
    fractions = np.empty((n_axes, len(prices), n_flat))
    saturated = 0
    for ax in range(n_axes):
        decay = math.exp(-float(kernels.rates[ax]) * dt)
        updated = decay * (impact_flat[ax][None, :] + increments[ax])
        position = updated / axes.impact_steps[ax]
        saturated += int((position > n_impact).sum())
        position = np.clip(position, 0.0, float(n_impact))
        low = np.minimum(position.astype(np.int64), n_impact - 1)
        fractions[ax] = position - low
        base += low * strides[ax]
    return cash, base, fractions, strides, saturated


@njit(parallel=True, cache=True)
def _sweep_candidate(continuation, cash, base, fractions, strides, best, argbest, k, k_upper):
    """Fused max-update over all inventory nodes that can afford candidate k.

    For inventory node kx, the post-trade inventory index is kx - k, so the
    continuation slab is ``continuation[kx - k]``. The comparison is strict,
    which makes ties resolve to the smallest candidate as long as candidates
    are swept in increasing order.
    """
    n_axes = strides.shape[0]
    corners = 1 << n_axes
    n_price, n_flat = cash.shape
    for kx in prange(k, k_upper + 1):
        slab = continuation[kx - k]
        value_row = best[kx]
        arg_row = argbest[kx]
        for q in range(n_price):
            slab_q = slab[q]
            for i in range(n_flat):
                total = cash[q, i]
                lower = base[q, i]
                for corner in range(corners):
                    weight = 1.0
                    offset = 0
                    for ax in range(n_axes):
                        frac = fractions[ax, q, i]
                        if (corner >> ax) & 1:
                            weight *= frac
                            offset += strides[ax]
                        else:
                            weight *= 1.0 - frac
                    total += weight * slab_q[lower + offset]
                if total > value_row[q, i]:
                    value_row[q, i] = total
                    arg_row[q, i] = k


def _policy_dtype(n_candidates: int):
    if n_candidates <= np.iinfo(np.uint8).max:
        return np.uint8
    if n_candidates <= np.iinfo(np.uint16).max:
        return np.uint16
    return np.uint32


def solve_grid(
    config: GridConfig,
    dyn: GbmDynamics,
    prob: ExecutionProblem,
    kernels: KernelSet,
    pool: TwoLayerPool,
    keep_values: bool | None = None,
) -> GridSolution:
    """Backward induction over the full grid; zero drift only.

    At each step and node the solver evaluates every candidate trade from the
    inventory grid up to the current holding, scores it as immediate cash-flow
    plus the interpolated conditional continuation, and stores the argmax
    (smallest candidate wins exact ties). Impact states that leave the grid
    are clamped and counted in the diagnostics.

    ``keep_values`` retains the per-step value tables (automatic for small
    grids, forced off for large ones unless explicitly requested).
    """
    if dyn.mu != 0.0:
        raise ValueError(
            "the grid solver excludes buy candidates and therefore requires zero drift; "
            f"got mu={dyn.mu}"
        )
    axes = build_grid_axes(config, dyn, prob, kernels, pool)
    transitions = transition_matrix(axes, dyn, prob.dt)

    n_price = len(axes.prices)
    n_inv = len(axes.inventories)
    impact_flat = _impact_flat_values(axes)
    n_flat = impact_flat.shape[1]
    iota = kernels.weights @ impact_flat

    table_bytes = n_inv * n_price * n_flat * 8 * (prob.steps + 1)
    if keep_values is None:
        keep_values = table_bytes <= 200 * 2**20

    values = np.empty((n_inv, n_price, n_flat))
    diag = GridDiagnostics()

    # Terminal layer: liquidate everything in one trade.
    for kx in range(n_inv):
        cash, _, _, _, _ = _candidate_tables(
            axes.inventories[kx], axes.prices, iota, impact_flat, pool, kernels, prob.dt, axes
        )
        values[kx] = cash

    kept: list[np.ndarray] = [values.copy()] if keep_values else []
    policies: list[np.ndarray] = []
    dtype = _policy_dtype(n_inv)
    continuation = np.empty_like(values)

    for n in range(prob.steps - 1, -1, -1):
        started = time.perf_counter()
        for kx in range(n_inv):
            np.dot(transitions, values[kx], out=continuation[kx])
        best = np.full_like(values, -np.inf)
        argbest = np.zeros((n_inv, n_price, n_flat), dtype=dtype)
        for k in range(n_inv):
            cash, base, fractions, strides, saturated = _candidate_tables(
                axes.inventories[k], axes.prices, iota, impact_flat, pool, kernels, prob.dt, axes
            )
            diag.impact_saturations += saturated
            diag.candidate_evaluations += (n_inv - k) * n_price * n_flat
            _sweep_candidate(continuation, cash, base, fractions, strides, best, argbest, k, n_inv - 1)
        values, best = best, values
        policies.append(argbest)
        if keep_values:
            kept.append(values.copy())
        diag.step_seconds.append(time.perf_counter() - started)
        logger.debug("grid step %d solved in %.2fs", n, diag.step_seconds[-1])

    policies.reverse()
    if keep_values:
        kept.reverse()

    return GridSolution(
        config=config,
        axes=axes,
        policies=policies,
        values=kept if keep_values else None,
        initial_values=values.copy(),
        diagnostics=diag,
        order_size=prob.order_size,
        dt=prob.dt,
        weights=kernels.weights.copy(),
        rates=kernels.rates.copy(),
        upper_liquidity=pool.upper_liquidity,
        lower_liquidity=pool.lower_liquidity,
        threshold=pool.threshold,
    )


def evaluate_policy(solution: GridSolution, path: np.ndarray) -> Schedule:
    """Forward pass reading the stored policy along a fundamental price path.

    Price lookup snaps to the nearest grid node (the policy is a grid-valued
    argmax, so interpolating it across price would be ill-defined); across the
    impact dimensions the policy's trade values are blended multilinearly.
    The state itself evolves exactly, and the terminal trade clears the
    remaining inventory so the schedule sums to the order exactly.
    """
    path = np.asarray(path, dtype=float)
    n_steps = len(solution.policies)
    if len(path) != n_steps + 1:
        raise ValueError(f"path must have {n_steps + 1} entries, got {len(path)}")
    if (path <= 0).any():
        raise ValueError("path values must be strictly positive")

    axes = solution.axes
    kernels = KernelSet(solution.weights, solution.rates)
    pool = TwoLayerPool(solution.upper_liquidity, solution.lower_liquidity, solution.threshold)
    n_impact = axes.impact_grids.shape[1] - 1
    n_axes = axes.impact_grids.shape[0]
    inv_step = axes.inventories[1] - axes.inventories[0]

    inventory = solution.order_size
    impacts = np.zeros(n_axes)
    trades = np.zeros(n_steps + 1)

    for n in range(n_steps):
        log_f = math.log(path[n])
        if log_f < axes.log_prices[0] or log_f > axes.log_prices[-1]:
            solution.diagnostics.price_saturations += 1
        kf = int(np.abs(axes.log_prices - log_f).argmin())
        kx = int(round(inventory / inv_step))
        kx = min(max(kx, 0), len(axes.inventories) - 1)

        lows = np.empty(n_axes, dtype=np.int64)
        fracs = np.empty(n_axes)
        for ax in range(n_axes):
            position = impacts[ax] / axes.impact_steps[ax]
            if position > n_impact:
                solution.diagnostics.impact_saturations += 1
            position = min(max(position, 0.0), float(n_impact))
            lows[ax] = min(int(position), n_impact - 1)
            fracs[ax] = position - lows[ax]

        policy = solution.policies[n][kx, kf].reshape((n_impact + 1,) * n_axes)
        blended = 0.0
        for corner in itertools.product((0, 1), repeat=n_axes):
            weight = 1.0
            index = []
            for ax, bit in enumerate(corner):
                weight *= fracs[ax] if bit else 1.0 - fracs[ax]
                index.append(lows[ax] + bit)
            blended += weight * float(policy[tuple(index)])
        delta = min(blended * inv_step, inventory)

        state = SpotState(path[n], impacts)
        impacts = two_layer_impact_update(pool, state, kernels, delta, solution.dt)
        inventory -= delta
        trades[n] = delta

    trades[n_steps] = inventory
    return Schedule(trades)
