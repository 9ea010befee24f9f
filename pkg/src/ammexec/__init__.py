"""Optimal liquidation on constant-product and two-layer concentrated-liquidity AMMs.

The library computes execution schedules that maximize expected proceeds of a
large order under transient, pool-derived price impact: closed-form solutions
and backward-recursion controllers for the constant-product case, and a
grid-based stochastic control solver for the two-layer liquidity case.
"""

from .core import (
    ConstantProductPool,
    ExecutionProblem,
    GbmDynamics,
    Schedule,
    TwoLayerPool,
    exec_price_first_order,
    gbm_cross_moment,
    gbm_moment,
    post_swap_price_first_order,
    swap_amount_out,
)
from .closed_form import (
    expected_price_vector,
    expected_proceeds,
    gram_factor,
    impact_moment_matrix,
    impact_moment_matrix_inverse,
    optimal_schedule,
    optimal_schedule_martingale,
    two_period_schedule,
    two_period_sensitivities,
)
from .dp import (
    ClosedLoopCoefficients,
    ExecutionState,
    OpenLoopCoefficients,
    bumped_path,
    closed_loop_coefficients,
    closed_loop_control,
    closed_loop_value,
    mean_price_path,
    open_loop_coefficients,
    open_loop_schedule,
    simulate_closed_loop,
    three_sigma_path,
)
from .errors import (
    AmmExecError,
    ConcavityError,
    ConfigError,
    DriftConditionError,
    ExpansionAccuracyWarning,
    ExpansionDomainError,
    FitConvergenceError,
)
from .grid import (
    GridConfig,
    GridSolution,
    SpotState,
    build_grid_axes,
    evaluate_policy,
    solve_grid,
    threshold_crossing_trade,
    transition_matrix,
    two_layer_cashflow,
    two_layer_impact_update,
)
from .kernels import KernelFit, KernelSet, PowerLawTarget, fit_power_law, kernel_value

__version__ = "0.1.0"

__all__ = [
    "AmmExecError",
    "ClosedLoopCoefficients",
    "ConcavityError",
    "ConfigError",
    "ConstantProductPool",
    "DriftConditionError",
    "ExecutionProblem",
    "ExecutionState",
    "ExpansionAccuracyWarning",
    "ExpansionDomainError",
    "FitConvergenceError",
    "GbmDynamics",
    "GridConfig",
    "GridSolution",
    "KernelFit",
    "KernelSet",
    "OpenLoopCoefficients",
    "PowerLawTarget",
    "Schedule",
    "SpotState",
    "TwoLayerPool",
    "build_grid_axes",
    "bumped_path",
    "closed_loop_coefficients",
    "closed_loop_control",
    "closed_loop_value",
    "evaluate_policy",
    "exec_price_first_order",
    "expected_price_vector",
    "expected_proceeds",
    "fit_power_law",
    "gbm_cross_moment",
    "gbm_moment",
    "gram_factor",
    "impact_moment_matrix",
    "impact_moment_matrix_inverse",
    "kernel_value",
    "mean_price_path",
    "open_loop_coefficients",
    "open_loop_schedule",
    "optimal_schedule",
    "optimal_schedule_martingale",
    "post_swap_price_first_order",
    "simulate_closed_loop",
    "solve_grid",
    "swap_amount_out",
    "three_sigma_path",
    "threshold_crossing_trade",
    "transition_matrix",
    "two_layer_cashflow",
    "two_layer_impact_update",
    "two_period_schedule",
    "two_period_sensitivities",
]
