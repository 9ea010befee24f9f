"""Backward-recursion solvers for the constant-product execution problem.

Two variants: a closed-loop controller that feeds back the realized
fundamental price, and an open-loop schedule fixed at time zero from
expectations only. Both assume lognormal fundamental dynamics; the value
function is quadratic in (trade, inventory, impact) at every step, so the
backward pass reduces to scalar coefficient recursions.

The coefficient tables are indexed by the time subscript n = 0..N; the
quadratic coefficient and the three linear ones used by the control at step n
live at index n + 1 (index 0 of those arrays is unused). Coefficient tables
are immutable after the backward pass and safe to share across threads.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConstantProductPool, ExecutionProblem, GbmDynamics, Schedule
from .errors import ConcavityError
from .kernels import KernelSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExecutionState:
    """Inventory, per-kernel cumulative relative impacts, and fundamental price."""

    inventory: float
    impacts: np.ndarray
    fundamental: float

    def __post_init__(self):
        object.__setattr__(self, "impacts", np.asarray(self.impacts, dtype=float))
        if not self.fundamental > 0:
            raise ValueError(f"fundamental must be positive, got {self.fundamental}")


@dataclass(frozen=True)
class _CoefficientTables:
    """Value-function coefficients plus the per-step control scalars."""

    inv_price: np.ndarray       # coefficient on x*f                (N+1,)
    inv_impact: np.ndarray      # coefficients on x*f*I_j           (N+1, J+1)
    inv_sq: np.ndarray          # coefficient on x^2*f^(3/2)        (N+1,)
    const: np.ndarray           # coefficient on sqrt(f)            (N+1,)
    impact_lin: np.ndarray      # coefficients on sqrt(f)*I_j       (N+1, J+1)
    impact_sq: np.ndarray       # coefficients on sqrt(f)*I_j1*I_j2 (N+1, J+1, J+1)
    quad: np.ndarray            # control denominators, entry n is used at step n-1
    lin_const: np.ndarray
    lin_impact: np.ndarray
    lin_inv: np.ndarray

    @property
    def n_kernels(self) -> int:
        return self.inv_impact.shape[1]

    @property
    def steps(self) -> int:
        return len(self.inv_price) - 1


class ClosedLoopCoefficients(_CoefficientTables):
    """Backward-pass output of the price-feedback controller."""


class OpenLoopCoefficients(_CoefficientTables):
    """Backward-pass output of the expectation-only controller."""


def _alloc(n_steps: int, n_kernels: int):
    shape1 = (n_steps + 1,)
    shape2 = (n_steps + 1, n_kernels)
    shape3 = (n_steps + 1, n_kernels, n_kernels)
    return (
        np.zeros(shape1), np.zeros(shape2), np.zeros(shape1), np.zeros(shape1),
        np.zeros(shape2), np.zeros(shape3),
        np.full(shape1, np.nan), np.full(shape1, np.nan),
        np.full(shape2, np.nan), np.full(shape1, np.nan),
    )


def closed_loop_coefficients(
    dyn: GbmDynamics,
    kernels: KernelSet,
    prob: ExecutionProblem,
    pool: ConstantProductPool,
) -> ClosedLoopCoefficients:
    """Run the closed-loop backward recursion down to step 0.

    Raises :class:`ConcavityError` if any step's quadratic coefficient fails
    to be positive, which happens once the drift outruns volatility and pool
    resilience.
    """
    n_steps, big_j = prob.steps, len(kernels)
    liq, dt, mu, sigma = pool.liquidity, prob.dt, dyn.mu, dyn.sigma
    rates = kernels.rates
    a, b, c, d, e, f, quad, lin_c, lin_i, lin_x = _alloc(n_steps, big_j)

    a[n_steps] = 1.0
    b[n_steps] = -kernels.weights
    c[n_steps] = -1.0 / liq

    # One-step moment growth factors; the f-table factor couples kernel pairs.
    g_price = math.exp(mu * dt)
    g_impact = np.exp((mu - rates) * dt)
    g_three_half = math.exp((1.5 * mu + 0.375 * sigma**2) * dt)
    g_half = math.exp((0.5 * mu - 0.125 * sigma**2) * dt)
    g_half_imp = np.exp((0.5 * mu - rates - 0.125 * sigma**2) * dt)
    g_half_pair = np.exp((0.5 * mu - rates[:, None] - rates[None, :] - 0.125 * sigma**2) * dt)

    for n in range(n_steps - 1, -1, -1):
        k = n + 1
        phi = math.fsum((
            1.0 / liq,
            (2.0 / liq) * float((b[k] * g_impact).sum()),
            -c[k] * g_three_half,
            -(4.0 / liq**2) * float((f[k] * g_half_pair).sum()),
        ))
        if phi <= 0:
            raise ConcavityError(k, phi)
        t1 = 1.0 - a[k] * g_price + (2.0 / liq) * float((e[k] * g_half_imp).sum())
        t2 = -kernels.weights - b[k] * g_impact + (4.0 / liq) * (f[k] * g_half_pair).sum(axis=1)
        t3 = (2.0 / liq) * float((b[k] * g_impact).sum()) - 2.0 * c[k] * g_three_half
        quad[k], lin_c[k], lin_i[k], lin_x[k] = phi, t1, t2, t3

        # Products are accumulated before the division by the quadratic
        # coefficient to limit cancellation at small dt.
        a[n] = a[k] * g_price + t1 * t3 / (2.0 * phi)
        b[n] = b[k] * g_impact + t2 * t3 / (2.0 * phi)
        c[n] = c[k] * g_three_half + t3 * t3 / (4.0 * phi)
        d[n] = d[k] * g_half + t1 * t1 / (4.0 * phi)
        e[n] = e[k] * g_half_imp + t1 * t2 / (2.0 * phi)
        f[n] = f[k] * g_half_pair + np.outer(t2, t2) / (4.0 * phi)

    return ClosedLoopCoefficients(a, b, c, d, e, f, quad, lin_c, lin_i, lin_x)


def open_loop_coefficients(
    dyn: GbmDynamics,
    kernels: KernelSet,
    prob: ExecutionProblem,
    pool: ConstantProductPool,
) -> OpenLoopCoefficients:
    """Run the open-loop backward recursion down to step 0.

    Unlike the closed-loop pass, the per-step scalars carry explicit
    time-index factors because the expected impact state grows with the
    horizon instead of riding on the realized price.
    """
    n_steps, big_j = prob.steps, len(kernels)
    liq, dt, mu, sigma = pool.liquidity, prob.dt, dyn.mu, dyn.sigma
    rates = kernels.rates
    a, b, c, d, e, f, quad, lin_c, lin_i, lin_x = _alloc(n_steps, big_j)

    a[n_steps] = math.exp(mu * n_steps * dt)
    b[n_steps] = -kernels.weights * math.exp(mu * n_steps * dt)
    c[n_steps] = -math.exp((0.5 * mu + 0.375 * sigma**2) * n_steps * dt) / liq

    decay = np.exp(-rates * dt)
    decay_pair = np.exp(-(rates[:, None] + rates[None, :]) * dt)

    for n in range(n_steps - 1, -1, -1):
        k = n + 1
        grow_price = math.exp(mu * n * dt)
        grow_half = math.exp((0.5 * mu + 0.375 * sigma**2) * n * dt)
        grow_three_half = math.exp((1.5 * mu + 0.375 * sigma**2) * n * dt)
        grow_pair = math.exp((mu + 0.75 * sigma**2) * n * dt)

        phi = math.fsum((
            grow_three_half / liq,
            (2.0 / liq) * float((b[k] * decay).sum()) * grow_half,
            -c[k],
            -(4.0 / liq**2) * float((f[k] * decay_pair).sum()) * grow_pair,
        ))
        if phi <= 0:
            raise ConcavityError(k, phi)
        t1 = grow_price - a[k] + (2.0 / liq) * float((e[k] * decay).sum()) * grow_half
        t2 = -kernels.weights * grow_price - b[k] * decay \
            + (4.0 / liq) * (f[k] * decay_pair).sum(axis=1) * grow_half
        t3 = (2.0 / liq) * float((b[k] * decay).sum()) * grow_half - 2.0 * c[k]
        quad[k], lin_c[k], lin_i[k], lin_x[k] = phi, t1, t2, t3

        a[n] = a[k] + t1 * t3 / (2.0 * phi)
        b[n] = b[k] * decay + t2 * t3 / (2.0 * phi)
        c[n] = c[k] + t3 * t3 / (4.0 * phi)
        d[n] = d[k] + t1 * t1 / (4.0 * phi)
        e[n] = e[k] * decay + t1 * t2 / (2.0 * phi)
        f[n] = f[k] * decay_pair + np.outer(t2, t2) / (4.0 * phi)

    return OpenLoopCoefficients(a, b, c, d, e, f, quad, lin_c, lin_i, lin_x)


def closed_loop_control(coeffs: ClosedLoopCoefficients, state: ExecutionState, n: int) -> float:
    """Optimal trade at step n given the current state; valid for 0 <= n < N.

    The terminal trade is not a control: complete liquidation forces it to
    the remaining inventory.
    """
    if not 0 <= n < coeffs.steps:
        raise ValueError(f"control step must satisfy 0 <= n < {coeffs.steps}, got {n}")
    k = n + 1
    root = math.sqrt(state.fundamental)
    numer = (
        coeffs.lin_const[k]
        + float(state.impacts @ coeffs.lin_impact[k])
        + state.inventory * root * coeffs.lin_inv[k]
    )
    return numer / (2.0 * coeffs.quad[k] * root)


def closed_loop_value(coeffs: ClosedLoopCoefficients, state: ExecutionState, n: int) -> float:
    """Value function at step n: maximal expected proceeds from here on."""
    x, i, f = state.inventory, state.impacts, state.fundamental
    root = math.sqrt(f)
    return (
        x * f * (coeffs.inv_price[n] + float(coeffs.inv_impact[n] @ i) + coeffs.inv_sq[n] * x * root)
        + root * (
            coeffs.const[n]
            + float(coeffs.impact_lin[n] @ i)
            + float(i @ coeffs.impact_sq[n] @ i)
        )
    )


def simulate_closed_loop(
    coeffs: ClosedLoopCoefficients,
    path: np.ndarray,
    prob: ExecutionProblem,
    pool: ConstantProductPool,
    kernels: KernelSet,
) -> Schedule:
    """Replay the closed-loop controller along a fundamental price path.

    The impact state follows I_{n+1} = decay * (I_n + 2*d_n*sqrt(f_n)/L) and
    the terminal trade clears the remaining inventory, so the schedule sums
    to the initial order exactly by construction.
    """
    path = np.asarray(path, dtype=float)
    if len(path) != prob.steps + 1:
        raise ValueError(f"path must have {prob.steps + 1} entries, got {len(path)}")
    if (path <= 0).any():
        raise ValueError("path values must be strictly positive")

    decay = np.exp(-kernels.rates * prob.dt)
    inventory = prob.order_size
    impacts = np.zeros(len(kernels))
    trades = np.zeros(prob.steps + 1)
    negative = 0
    for n in range(prob.steps):
        state = ExecutionState(inventory, impacts, path[n])
        d = closed_loop_control(coeffs, state, n)
        if d < 0:
            negative += 1
        trades[n] = d
        impacts = decay * (impacts + 2.0 * d * math.sqrt(path[n]) / pool.liquidity)
        inventory -= d
    trades[prob.steps] = inventory
    if negative:
        logger.info("closed-loop replay produced %d negative trades", negative)
    return Schedule(trades)


def open_loop_schedule(
    coeffs: OpenLoopCoefficients,
    dyn: GbmDynamics,
    prob: ExecutionProblem,
    pool: ConstantProductPool,
    kernels: KernelSet,
) -> Schedule:
    """Forward pass of the open-loop controller from the initial state."""
    decay = np.exp(-kernels.rates * prob.dt)
    root = math.sqrt(dyn.f0)
    inventory = prob.order_size
    impacts = np.zeros(len(kernels))
    trades = np.zeros(prob.steps + 1)
    for n in range(prob.steps):
        k = n + 1
        numer = (
            coeffs.lin_const[k]
            + float(impacts @ coeffs.lin_impact[k])
            + inventory * root * coeffs.lin_inv[k]
        )
        d = numer / (2.0 * coeffs.quad[k] * root)
        trades[n] = d
        grow = math.exp((0.5 * dyn.mu + 0.375 * dyn.sigma**2) * n * prob.dt)
        impacts = decay * (impacts + 2.0 * d * root * grow / pool.liquidity)
        inventory -= d
    trades[prob.steps] = inventory
    return Schedule(trades)


def mean_price_path(dyn: GbmDynamics, prob: ExecutionProblem) -> np.ndarray:
    """Expected fundamental price at each trading time."""
    n = np.arange(prob.steps + 1)
    return dyn.f0 * np.exp(dyn.mu * n * prob.dt)


def three_sigma_path(dyn: GbmDynamics, prob: ExecutionProblem, direction: int) -> np.ndarray:
    """Stress trajectory f0 * exp((mu - sigma^2/2)*n*dt +/- 3*sigma*n*sqrt(dt))."""
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    n = np.arange(prob.steps + 1)
    drift = (dyn.mu - 0.5 * dyn.sigma**2) * n * prob.dt
    return dyn.f0 * np.exp(drift + direction * 3.0 * dyn.sigma * n * math.sqrt(prob.dt))


def bumped_path(
    dyn: GbmDynamics,
    prob: ExecutionProblem,
    bump_step: int,
    direction: int,
) -> np.ndarray:
    """Mean path with a persistent one-step multiplicative shock.

    All values from ``bump_step`` onward are multiplied by
    exp((mu - sigma^2/2)*dt +/- 3*sigma*sqrt(dt)).
    """
    if direction not in (1, -1):
        raise ValueError(f"direction must be +1 or -1, got {direction}")
    if not 0 <= bump_step <= prob.steps:
        raise ValueError(f"bump_step must lie in [0, {prob.steps}], got {bump_step}")
    path = mean_price_path(dyn, prob)
    factor = math.exp(
        (dyn.mu - 0.5 * dyn.sigma**2) * prob.dt + direction * 3.0 * dyn.sigma * math.sqrt(prob.dt)
    )
    path[bump_step:] *= factor
    return path
