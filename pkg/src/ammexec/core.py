"""Constant-product pool mechanics, lognormal price moments, and shared problem types.

All v2 pool state is carried as (liquidity, spot price); reserves are derived
on demand from q_a = L / sqrt(p), q_b = L * sqrt(p). Types are immutable and
every operation is a pure function, so everything here is safe to share
across threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ExpansionAccuracyWarning, ExpansionDomainError

# Dimensionless trade size delta*sqrt(p)/L beyond which the first-order
# expansion is considered degraded (warning) or meaningless (hard error).
EXPANSION_WARN = 0.1
EXPANSION_FAIL = 0.5


@dataclass(frozen=True)
class ConstantProductPool:
    """Uniswap-v2 style pool: reserves satisfy q_a * q_b = liquidity**2."""

    liquidity: float

    def __post_init__(self):
        if not self.liquidity > 0:
            raise ValueError(f"liquidity must be positive, got {self.liquidity}")

    def reserves(self, price: float) -> tuple[float, float]:
        """Implied (token-a, token-b) reserves at the given spot price."""
        _check_price(price)
        root = np.sqrt(price)
        return self.liquidity / root, self.liquidity * root


@dataclass(frozen=True)
class TwoLayerPool:
    """Concentrated-liquidity pool with two liquidity layers.

    ``upper_liquidity`` applies while the spot price is above ``threshold``,
    ``lower_liquidity`` below it. Equal layers must behave exactly like a
    :class:`ConstantProductPool` of that liquidity.
    """

    upper_liquidity: float
    lower_liquidity: float
    threshold: float

    def __post_init__(self):
        if not self.upper_liquidity > 0:
            raise ValueError(f"upper_liquidity must be positive, got {self.upper_liquidity}")
        if not self.lower_liquidity > 0:
            raise ValueError(f"lower_liquidity must be positive, got {self.lower_liquidity}")
        if not self.threshold > 0:
            raise ValueError(f"threshold must be positive, got {self.threshold}")

    @property
    def is_degenerate(self) -> bool:
        """True when both layers carry identical liquidity."""
        return self.upper_liquidity == self.lower_liquidity


@dataclass(frozen=True)
class GbmDynamics:
    """Geometric Brownian motion for the fundamental price.

    f_n = f0 * exp((mu - sigma^2/2) * t_n + sigma * W_n)
    """

    f0: float
    mu: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not self.f0 > 0:
            raise ValueError(f"f0 must be positive, got {self.f0}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")


@dataclass(frozen=True)
class ExecutionProblem:
    """A sell order of ``order_size`` token a over ``steps`` intervals of ``horizon``."""

    horizon: float
    steps: int
    order_size: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if self.steps < 1:
            raise ValueError(f"steps must be at least 1, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def times(self) -> np.ndarray:
        """Trading times t_0 = 0, ..., t_N = horizon (endpoint exact)."""
        return np.linspace(0.0, self.horizon, self.steps + 1)


@dataclass(frozen=True)
class Schedule:
    """Trades per step, one entry per trading time (length steps + 1)."""

    trades: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "trades", np.asarray(self.trades, dtype=float))

    def __len__(self) -> int:
        return len(self.trades)

    def total(self) -> float:
        return float(self.trades.sum())

    def inventory_after(self, initial: float | None = None) -> np.ndarray:
        """Inventory held after each trade; starts from ``initial`` (default: total)."""
        x0 = self.total() if initial is None else initial
        return x0 - np.cumsum(self.trades)

    def check_volume(self, order_size: float, rtol: float = 1e-9) -> None:
        gap = abs(self.total() - order_size)
        if gap > rtol * max(abs(order_size), 1.0):
            raise ValueError(
                f"schedule sums to {self.total()!r}, expected {order_size!r} (gap {gap:.3e})"
            )


def _check_price(price: float) -> None:
    if not price > 0:
        raise ValueError(f"price must be positive, got {price}")


def _check_expansion(pool: ConstantProductPool, price: float, delta_a: float) -> None:
    size = abs(delta_a) * np.sqrt(price) / pool.liquidity
    if size >= EXPANSION_FAIL:
        raise ExpansionDomainError(
            f"relative trade size {size:.4g} exceeds {EXPANSION_FAIL}; "
            "first-order price formulas are not valid here"
        )
    if size >= EXPANSION_WARN:
        warnings.warn(
            f"relative trade size {size:.4g} exceeds {EXPANSION_WARN}; "
            "first-order price formulas lose accuracy (exact swap math is available)",
            ExpansionAccuracyWarning,
            stacklevel=3,
        )


def swap_amount_out(pool: ConstantProductPool, price: float, delta_a: float) -> float:
    """Exact token-b amount received for selling ``delta_a`` token a.

    Solves the constant-product invariant on the implied reserves:
    delta_b = delta_a * p / (1 + delta_a * sqrt(p) / L).
    """
    _check_price(price)
    if delta_a < 0:
        raise ValueError(f"delta_a must be nonnegative, got {delta_a}")
    return delta_a * price / (1.0 + delta_a * np.sqrt(price) / pool.liquidity)


def exec_price_first_order(pool: ConstantProductPool, price: float, delta_a: float) -> float:
    """Average exchange rate of the whole swap, first order in delta*sqrt(p)/L.

    Returns p * (1 - delta_a * sqrt(p) / L); the relative slippage is the
    second factor minus one.
    """
    _check_price(price)
    _check_expansion(pool, price, delta_a)
    return price * (1.0 - delta_a * np.sqrt(price) / pool.liquidity)


def post_swap_price_first_order(pool: ConstantProductPool, price: float, delta_a: float) -> float:
    """Marginal price right after the swap, first order in delta*sqrt(p)/L.

    Returns p * (1 - 2 * delta_a * sqrt(p) / L): the relative price impact is
    exactly twice the slippage of :func:`exec_price_first_order`.
    """
    _check_price(price)
    _check_expansion(pool, price, delta_a)
    return price * (1.0 - 2.0 * delta_a * np.sqrt(price) / pool.liquidity)


# Fractional moments E[f_n^q] of the GBM admit closed forms
#   f0^q * exp(q*mu*n*dt + q*(q-1)*sigma^2*n*dt/2)
# but only the three powers used by the solvers are exposed.
_SUPPORTED_POWERS = (1.0, 0.5, 1.5)


def gbm_moment(dyn: GbmDynamics, power: float, n_steps: int, dt: float) -> float:
    """E[f_n^power] for power in {1, 1/2, 3/2}."""
    if power not in _SUPPORTED_POWERS:
        raise ValueError(f"power must be one of {_SUPPORTED_POWERS}, got {power}")
    if n_steps < 0:
        raise ValueError(f"n_steps must be nonnegative, got {n_steps}")
    t = n_steps * dt
    rate = power * dyn.mu + 0.5 * power * (power - 1.0) * dyn.sigma**2
    return dyn.f0**power * np.exp(rate * t)


def gbm_cross_moment(dyn: GbmDynamics, m: int, n: int, dt: float) -> float:
    """E[f_max(m,n) * sqrt(f_min(m,n))] under the GBM dynamics.

    The larger index carries the full power of the price, the smaller one the
    extra volatility term:
    f0^(3/2) * exp(mu*(max + min/2)*dt + (3*sigma^2/8)*min*dt).
    """
    if m < 0 or n < 0:
        raise ValueError(f"indices must be nonnegative, got ({m}, {n})")
    hi, lo = (m, n) if m >= n else (n, m)
    rate = dyn.mu * (hi + 0.5 * lo) + 0.375 * dyn.sigma**2 * lo
    return dyn.f0**1.5 * np.exp(rate * dt)
