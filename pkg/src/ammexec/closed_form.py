"""Closed-form optimal schedules for the constant-product pool.

The expected proceeds of a schedule d are d@b - d@A@d / L with b the expected
price vector and A the impact moment matrix, so the optimum under the volume
constraint comes out of a single linear system via a Lagrange multiplier. With
one exponential kernel the inverse of A is tridiagonal and is built directly;
the multi-kernel path goes through a symmetric positive-definite
factorization.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import ExecutionProblem, GbmDynamics, ConstantProductPool, Schedule
from .errors import DriftConditionError
from .kernels import KernelSet

VOLUME_RTOL = 1e-9


def expected_price_vector(dyn: GbmDynamics, prob: ExecutionProblem) -> np.ndarray:
    """Expected fundamental price at each trading time: f0 * exp(mu*n*dt)."""
    n = np.arange(prob.steps + 1)
    return dyn.f0 * np.exp(dyn.mu * n * prob.dt)


def impact_moment_matrix(dyn: GbmDynamics, kernels: KernelSet, prob: ExecutionProblem) -> np.ndarray:
    """Symmetric matrix of kernel-weighted cross moments.

    Entry (m, n) is sum_j w_j * exp(-rho_j*|m-n|*dt) * E[f_max * sqrt(f_min)].
    """
    idx = np.arange(prob.steps + 1)
    hi = np.maximum.outer(idx, idx)
    lo = np.minimum.outer(idx, idx)
    gap = (hi - lo) * prob.dt
    cross = dyn.f0**1.5 * np.exp(dyn.mu * (hi + 0.5 * lo) * prob.dt + 0.375 * dyn.sigma**2 * lo * prob.dt)
    decay = np.zeros_like(gap)
    for w, r in zip(kernels.weights, kernels.rates):
        decay += w * np.exp(-r * gap)
    return decay * cross


def check_drift_condition(dyn: GbmDynamics, kernels: KernelSet) -> None:
    """Positive definiteness needs mu < 3*sigma^2/4 + 4*min(rates)."""
    bound = 0.75 * dyn.sigma**2 + 4.0 * kernels.rates.min()
    if not dyn.mu < bound:
        raise DriftConditionError(
            f"drift mu={dyn.mu} must be below 3*sigma^2/4 + 4*min(rates) = {bound:.6g} "
            "for the impact moment matrix to be positive definite"
        )


def _gram_scalars(dyn: GbmDynamics, rate: float, prob: ExecutionProblem):
    """Decay ratio a, diagonal growth b_n, and pivots gamma_n of the single-kernel matrix."""
    a = np.exp(-(rate - dyn.mu) * prob.dt)
    n = np.arange(prob.steps + 1)
    b = np.exp((1.5 * dyn.mu + 0.375 * dyn.sigma**2) * n * prob.dt)
    gamma = np.empty(prob.steps + 1)
    gamma[0] = 1.0
    gamma[1:] = b[1:] - a**2 * b[:-1]
    return a, b, gamma


def gram_factor(dyn: GbmDynamics, rate: float, prob: ExecutionProblem) -> np.ndarray:
    """Upper-triangular V with V.T @ V equal to the moment matrix over f0^(3/2).

    Column n is built by the recursion v_n = a*v_{n-1} + sqrt(gamma_n)*e_n
    (v_0 = e_0), which requires every pivot gamma_n to be positive.
    """
    a, _, gamma = _gram_scalars(dyn, rate, prob)
    if (gamma[1:] <= 0).any():
        raise DriftConditionError(
            f"pivot sequence not positive (min {gamma[1:].min():.6g}); "
            f"requires mu < 3*sigma^2/4 + 4*rate = {0.75 * dyn.sigma**2 + 4 * rate:.6g}"
        )
    size = prob.steps + 1
    v = np.zeros((size, size))
    powers = a ** np.arange(size)
    root = np.sqrt(gamma)
    for n in range(size):
        v[: n + 1, n] = powers[n::-1] * root[: n + 1]
    return v


def impact_moment_matrix_inverse(dyn: GbmDynamics, rate: float, prob: ExecutionProblem) -> np.ndarray:
    """Tridiagonal inverse of the single-kernel moment matrix.

    Valid only under the drift condition mu < 3*sigma^2/4 + 4*rate, which
    keeps every pivot gamma_n positive.
    """
    a, _, gamma = _gram_scalars(dyn, rate, prob)
    if (gamma[1:] <= 0).any():
        raise DriftConditionError(
            f"pivot sequence not positive (min {gamma[1:].min():.6g}); "
            f"requires mu < 3*sigma^2/4 + 4*rate = {0.75 * dyn.sigma**2 + 4 * rate:.6g}"
        )
    size = prob.steps + 1
    inv = np.zeros((size, size))
    diag = np.empty(size)
    if size == 1:
        diag[0] = 1.0
    else:
        diag[0] = 1.0 + a**2 / gamma[1]
        for i in range(1, size - 1):
            diag[i] = 1.0 / gamma[i] + a**2 / gamma[i + 1]
        diag[-1] = 1.0 / gamma[-1]
    inv[np.diag_indices(size)] = diag
    off = -a / gamma[1:]
    inv[np.arange(size - 1), np.arange(1, size)] = off
    inv[np.arange(1, size), np.arange(size - 1)] = off
    return inv / dyn.f0**1.5


def expected_proceeds(
    schedule: Schedule,
    dyn: GbmDynamics,
    kernels: KernelSet,
    prob: ExecutionProblem,
    pool: ConstantProductPool,
) -> float:
    """Expected total cash-flow of a schedule: d@b - d@A@d / L."""
    d = schedule.trades
    b = expected_price_vector(dyn, prob)
    a = impact_moment_matrix(dyn, kernels, prob)
    return float(d @ b - d @ a @ d / pool.liquidity)


def optimal_schedule(
    dyn: GbmDynamics,
    kernels: KernelSet,
    prob: ExecutionProblem,
    pool: ConstantProductPool,
) -> Schedule:
    """Maximize expected proceeds subject to the volume constraint.

    The optimum mixes two profiles: one that spreads impact (A^-1 @ 1) and one
    that chases the expected price trend (A^-1 @ b), with weights set by the
    order size and pool liquidity. Trades may be negative when the drift makes
    overselling and unwinding optimal; no clamping is applied.
    """
    check_drift_condition(dyn, kernels)
    a = impact_moment_matrix(dyn, kernels, prob)
    b = expected_price_vector(dyn, prob)
    factor = cho_factor(a)
    ones = np.ones(prob.steps + 1)
    inv_ones = cho_solve(factor, ones)
    inv_b = cho_solve(factor, b)
    lam = (ones @ inv_b - 2.0 * prob.order_size / pool.liquidity) / (ones @ inv_ones)
    trades = 0.5 * pool.liquidity * (inv_b - lam * inv_ones)
    schedule = Schedule(trades)
    schedule.check_volume(prob.order_size, VOLUME_RTOL)
    return schedule


def optimal_schedule_martingale(
    dyn: GbmDynamics,
    kernels: KernelSet,
    prob: ExecutionProblem,
    pool: ConstantProductPool | None = None,
) -> Schedule:
    """Zero-drift optimum: order_size * A^-1 @ 1 / (1 @ A^-1 @ 1).

    Any drift on ``dyn`` is ignored; the moment matrix is built with zero
    drift. The result is independent of the liquidity level and of the
    initial price, which only scale the matrix uniformly: neither enters the
    computation, so the output is bitwise identical across them (``pool`` is
    accepted for interface parity only).
    """
    flat = GbmDynamics(f0=1.0, mu=0.0, sigma=dyn.sigma)
    a = impact_moment_matrix(flat, kernels, prob)
    factor = cho_factor(a)
    ones = np.ones(prob.steps + 1)
    inv_ones = cho_solve(factor, ones)
    trades = prob.order_size * inv_ones / (ones @ inv_ones)
    schedule = Schedule(trades)
    schedule.check_volume(prob.order_size, VOLUME_RTOL)
    return schedule


def two_period_schedule(sigma: float, rate: float, dt: float, order_size: float) -> tuple[float, float]:
    """Exact two-trade optimum in the zero-drift single-kernel case.

    d0 = xi * (e^(3*sigma^2*dt/8) - e^(-rate*dt)) / (e^(3*sigma^2*dt/8) + 1 - 2*e^(-rate*dt))
    and d1 = xi - d0. The first trade always exceeds the second.
    """
    growth = np.exp(0.375 * sigma**2 * dt)
    decay = np.exp(-rate * dt)
    denom = growth + 1.0 - 2.0 * decay
    if denom == 0.0:
        raise ValueError("degenerate two-period problem: sigma and rate both zero")
    if np.isinf(growth):
        # Large-volatility limit: fully front-loaded.
        return float(order_size), 0.0
    d0 = order_size * (growth - decay) / denom
    d1 = order_size * (1.0 - decay) / denom
    return float(d0), float(d1)


def two_period_sensitivities(sigma: float, rate: float, dt: float, order_size: float) -> tuple[float, float]:
    """Partial derivatives of the first two-period trade in (sigma, rate).

    Volatility pushes the first trade up, faster pool recovery pushes it down:
    d(d0)/d(sigma) > 0 and d(d0)/d(rate) < 0 whenever sigma, rate > 0.
    """
    growth = np.exp(0.375 * sigma**2 * dt)
    decay = np.exp(-rate * dt)
    denom = growth + 1.0 - 2.0 * decay
    if denom == 0.0:
        raise ValueError("degenerate two-period problem: sigma and rate both zero")
    d_sigma = order_size * 0.75 * sigma * dt * growth * (1.0 - decay) / denom**2
    d_rate = order_size * dt * decay * (1.0 - growth) / denom**2
    return float(d_sigma), float(d_rate)
