import itertools
import math

import numpy as np
import pytest

from ammexec import (
    ExecutionProblem,
    GbmDynamics,
    GridConfig,
    GridSolution,
    KernelSet,
    SpotState,
    TwoLayerPool,
    build_grid_axes,
    closed_loop_coefficients,
    evaluate_policy,
    mean_price_path,
    simulate_closed_loop,
    solve_grid,
    threshold_crossing_trade,
    transition_matrix,
    two_layer_cashflow,
    two_layer_impact_update,
)
from ammexec.core import ConstantProductPool

SMALL = GridConfig(price_points=60, inventory_points=24, impact_points=12)


@pytest.fixture
def two_layer_pool():
    return TwoLayerPool(1000.0, 500.0, 0.95)


class TestGridAxes:
    def test_price_grid_examples(self, base_dynamics, base_problem, single_kernel):
        cfg = GridConfig(price_points=2, inventory_points=4, impact_points=4)
        pool = TwoLayerPool(1000.0, 500.0, 1.0)
        axes = build_grid_axes(cfg, base_dynamics, base_problem, single_kernel, pool)
        # log mode m_T = -sigma^2 T / 2 = -0.045 at zero drift
        assert axes.prices[1] == pytest.approx(math.exp(-0.045), rel=1e-14)
        assert axes.prices[2] == pytest.approx(math.exp(-0.045 + 0.9), rel=1e-14)
        assert axes.prices[2] == pytest.approx(2.3514, abs=2e-4)

    def test_inventory_endpoints_exact(self, base_dynamics, base_problem, single_kernel,
                                       two_layer_pool):
        axes = build_grid_axes(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        assert axes.inventories[0] == 0.0
        assert axes.inventories[-1] == 1.0

    def test_impact_grid_formula(self, base_dynamics, base_problem, single_kernel,
                                 two_layer_pool):
        axes = build_grid_axes(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        k = 7
        expected = math.exp(-3.0 * 0.1) * 2.0 * k * math.sqrt(axes.prices[-1]) / (500.0 * 12)
        assert axes.impact_grids[0, k] == pytest.approx(expected, rel=1e-14)
        assert axes.impact_grids[0, 0] == 0.0

    def test_zero_volatility_needs_single_node_mode(self, base_problem, single_kernel,
                                                    two_layer_pool):
        dyn = GbmDynamics(f0=1.0, mu=0.0, sigma=0.0)
        with pytest.raises(ValueError):
            build_grid_axes(SMALL, dyn, base_problem, single_kernel, two_layer_pool)
        cfg = GridConfig(price_points=0, inventory_points=4, impact_points=4)
        axes = build_grid_axes(cfg, dyn, base_problem, single_kernel, two_layer_pool)
        assert len(axes.prices) == 1
        assert axes.prices[0] == pytest.approx(1.0, rel=1e-14)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GridConfig(price_points=1)
        with pytest.raises(ValueError):
            GridConfig(inventory_points=1)
        with pytest.raises(ValueError):
            GridConfig(half_width=0.0)


class TestTransitions:
    def test_rows_sum_to_one(self, base_dynamics, base_problem, single_kernel, two_layer_pool):
        axes = build_grid_axes(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        matrix = transition_matrix(axes, base_dynamics, base_problem.dt)
        assert (matrix >= 0).all()
        assert np.abs(matrix.sum(axis=1) - 1.0).max() < 1e-10

    def test_center_row_symmetric_without_log_drift(self, base_problem, single_kernel,
                                                    two_layer_pool):
        # mu = sigma^2/2 cancels the log drift, so the middle row is symmetric
        dyn = GbmDynamics(f0=1.0, mu=0.045, sigma=0.3)
        cfg = GridConfig(price_points=40, inventory_points=4, impact_points=4)
        axes = build_grid_axes(cfg, dyn, base_problem, single_kernel, two_layer_pool)
        matrix = transition_matrix(axes, dyn, base_problem.dt)
        center = matrix[20]
        assert np.abs(center - center[::-1]).max() < 1e-12

    def test_tiny_volatility_concentrates(self, base_problem, single_kernel, two_layer_pool):
        dyn = GbmDynamics(f0=1.0, mu=0.0, sigma=1e-9)
        axes = build_grid_axes(SMALL, dyn, base_problem, single_kernel, two_layer_pool)
        matrix = transition_matrix(axes, dyn, base_problem.dt)
        assert np.allclose(matrix, np.eye(len(axes.prices)), atol=1e-12)

    def test_zero_volatility_one_hot(self, base_dynamics, base_problem, single_kernel,
                                     two_layer_pool):
        axes = build_grid_axes(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        flat = GbmDynamics(f0=1.0, mu=0.0, sigma=0.0)
        matrix = transition_matrix(axes, flat, base_problem.dt)
        assert np.array_equal(matrix, np.eye(len(axes.prices)))


class TestThresholdCrossing:
    def test_reference_value(self, two_layer_pool):
        assert threshold_crossing_trade(two_layer_pool, 1.0, 1.0) == pytest.approx(25.0, rel=1e-14)

    def test_post_trade_price_lands_on_threshold(self, two_layer_pool):
        f, spot = 1.05, 1.02
        crossing = threshold_crossing_trade(two_layer_pool, f, spot)
        post = spot - 2.0 * crossing * f * math.sqrt(f) / two_layer_pool.upper_liquidity
        assert post == pytest.approx(two_layer_pool.threshold, rel=1e-12)

    def test_vanishes_at_threshold(self, two_layer_pool):
        eps = 1e-9
        small = threshold_crossing_trade(two_layer_pool, 1.0, two_layer_pool.threshold + eps)
        assert 0 < small < 1e-5

    def test_below_threshold_rejected(self, two_layer_pool):
        with pytest.raises(ValueError):
            threshold_crossing_trade(two_layer_pool, 1.0, 0.90)


class TestCashflowAndImpact:
    def test_equal_layers_reduce_to_single_pool(self, single_kernel):
        pool = TwoLayerPool(800.0, 800.0, 0.97)
        rng = np.random.default_rng(1)
        for _ in range(50):
            f = float(rng.uniform(0.5, 2.0))
            impact = rng.uniform(0.0, 0.01, 1)
            delta = float(rng.uniform(0.0, 50.0))  # large enough to cross
            state = SpotState(f, impact)
            drag = impact[0]
            expected = delta * f * (1.0 - drag - delta * math.sqrt(f) / 800.0)
            assert two_layer_cashflow(pool, state, single_kernel, delta) == pytest.approx(
                expected, rel=1e-12
            )
            expected_impact = math.exp(-0.3) * (impact + 2.0 * delta * math.sqrt(f) / 800.0)
            got = two_layer_impact_update(pool, state, single_kernel, delta, 0.1)
            assert np.allclose(got, expected_impact, rtol=1e-12)

    def test_branch_continuity_at_crossing_trade(self, two_layer_pool, single_kernel):
        state = SpotState(1.05, np.array([0.002]))
        spot = state.spot(single_kernel)
        crossing = threshold_crossing_trade(two_layer_pool, state.fundamental, spot)
        eps = 1e-9
        below = two_layer_cashflow(two_layer_pool, state, single_kernel, crossing * (1 - eps))
        above = two_layer_cashflow(two_layer_pool, state, single_kernel, crossing * (1 + eps))
        assert above == pytest.approx(below, abs=1e-9)
        at = two_layer_cashflow(two_layer_pool, state, single_kernel, crossing)
        assert at == pytest.approx(below, abs=1e-9)
        impact_below = two_layer_impact_update(
            two_layer_pool, state, single_kernel, crossing * (1 - eps), 0.1
        )
        impact_above = two_layer_impact_update(
            two_layer_pool, state, single_kernel, crossing * (1 + eps), 0.1
        )
        assert np.abs(impact_above - impact_below).max() < 1e-9

    def test_continuity_across_threshold_price(self, two_layer_pool, single_kernel):
        # with zero accumulated impact the below/above branches agree at the
        # threshold price itself
        eps = 1e-10
        delta = 5.0
        lo = two_layer_cashflow(
            two_layer_pool, SpotState(two_layer_pool.threshold * (1 - eps), np.zeros(1)),
            single_kernel, delta,
        )
        hi = two_layer_cashflow(
            two_layer_pool, SpotState(two_layer_pool.threshold * (1 + eps), np.zeros(1)),
            single_kernel, delta,
        )
        assert hi == pytest.approx(lo, abs=1e-9)

    def test_zero_trade_pure_decay(self, two_layer_pool, single_kernel):
        state = SpotState(1.2, np.array([0.004]))
        got = two_layer_impact_update(two_layer_pool, state, single_kernel, 0.0, 0.1)
        assert got[0] == pytest.approx(0.004 * math.exp(-0.3), rel=1e-14)
        assert two_layer_cashflow(two_layer_pool, state, single_kernel, 0.0) == 0.0

    def test_below_threshold_zero_impact_formula(self, two_layer_pool, single_kernel):
        state = SpotState(0.9, np.zeros(1))
        delta = 0.01
        expected = delta * 0.9 * (1.0 - delta * math.sqrt(0.9) / 500.0)
        assert two_layer_cashflow(two_layer_pool, state, single_kernel, delta) == pytest.approx(
            expected, rel=1e-14
        )

    def test_negative_trade_rejected(self, two_layer_pool, single_kernel):
        state = SpotState(1.0, np.zeros(1))
        with pytest.raises(ValueError):
            two_layer_cashflow(two_layer_pool, state, single_kernel, -0.1)
        with pytest.raises(ValueError):
            two_layer_impact_update(two_layer_pool, state, single_kernel, -0.1, 0.1)


def manual_node_values(solution, axes, pool, kernels, prob, transitions, next_values,
                       kx, kf, impact_index):
    """Scalar re-evaluation of every candidate at one grid node."""
    n_impact = axes.impact_grids.shape[1] - 1
    n_axes = axes.impact_grids.shape[0]
    impacts = np.array([
        axes.impact_grids[ax, impact_index[ax]] for ax in range(n_axes)
    ])
    f = axes.prices[kf]
    out = []
    for k in range(kx + 1):
        delta = axes.inventories[k]
        state = SpotState(f, impacts)
        cash = two_layer_cashflow(pool, state, kernels, delta)
        new_impacts = two_layer_impact_update(pool, state, kernels, delta, prob.dt)
        positions = np.clip(new_impacts / axes.impact_steps, 0.0, n_impact)
        lows = np.minimum(positions.astype(int), n_impact - 1)
        fracs = positions - lows
        continuation = 0.0
        for q in range(len(axes.prices)):
            grid_slice = next_values[kx - k, q].reshape((n_impact + 1,) * n_axes)
            interp = 0.0
            for corner in itertools.product((0, 1), repeat=n_axes):
                weight = 1.0
                idx = []
                for ax, bit in enumerate(corner):
                    weight *= fracs[ax] if bit else 1.0 - fracs[ax]
                    idx.append(lows[ax] + bit)
                interp += weight * grid_slice[tuple(idx)]
            continuation += transitions[kf, q] * interp
        out.append(cash + continuation)
    return np.asarray(out)


class TestSolveGrid:
    def test_rejects_drift(self, base_problem, single_kernel, two_layer_pool):
        dyn = GbmDynamics(f0=1.0, mu=0.01, sigma=0.3)
        with pytest.raises(ValueError):
            solve_grid(SMALL, dyn, base_problem, single_kernel, two_layer_pool)

    def test_policies_respect_inventory(self, base_dynamics, base_problem, single_kernel,
                                        two_layer_pool):
        solution = solve_grid(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        for policy in solution.policies:
            for kx in range(policy.shape[0]):
                assert policy[kx].max() <= kx

    def test_terminal_layer_is_liquidation_cashflow(self, base_dynamics, base_problem,
                                                    single_kernel, two_layer_pool):
        solution = solve_grid(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool,
                              keep_values=True)
        axes = solution.axes
        terminal = solution.values[-1]
        rng = np.random.default_rng(0)
        for _ in range(20):
            kx = int(rng.integers(0, len(axes.inventories)))
            kf = int(rng.integers(0, len(axes.prices)))
            ki = int(rng.integers(0, axes.impact_grids.shape[1]))
            state = SpotState(axes.prices[kf], np.array([axes.impact_grids[0, ki]]))
            want = two_layer_cashflow(two_layer_pool, state, single_kernel,
                                      axes.inventories[kx])
            assert terminal[kx, kf, ki] == pytest.approx(want, rel=1e-12)

    def test_stored_values_match_scalar_reference(self, base_dynamics, base_problem,
                                                  single_kernel, two_layer_pool):
        solution = solve_grid(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool,
                              keep_values=True)
        axes = solution.axes
        transitions = transition_matrix(axes, base_dynamics, base_problem.dt)
        rng = np.random.default_rng(7)
        for _ in range(12):
            n = int(rng.integers(0, base_problem.steps))
            kx = int(rng.integers(1, len(axes.inventories)))
            kf = int(rng.integers(0, len(axes.prices)))
            ki = (int(rng.integers(0, axes.impact_grids.shape[1])),)
            values = manual_node_values(
                solution, axes, two_layer_pool, single_kernel, base_problem,
                transitions, solution.values[n + 1], kx, kf, ki,
            )
            stored_value = solution.values[n][kx, kf, ki[0]]
            stored_arg = solution.policies[n][kx, kf, ki[0]]
            assert stored_value == pytest.approx(values.max(), rel=1e-10)
            # ties resolve to the smallest candidate
            assert stored_arg == int(np.flatnonzero(values >= values.max() - 1e-14)[0])

    def test_value_dominates_waiting(self, base_dynamics, base_problem, single_kernel,
                                     two_layer_pool):
        solution = solve_grid(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool,
                              keep_values=True)
        transitions = transition_matrix(solution.axes, base_dynamics, base_problem.dt)
        axes = solution.axes
        for n in (0, 5):
            values = manual_node_values(
                solution, axes, two_layer_pool, single_kernel, base_problem,
                transitions, solution.values[n + 1], 10, 30, (3,),
            )
            assert solution.values[n][10, 30, 3] >= values[0] - 1e-12


class TestEvaluatePolicy:
    def test_volume_and_nonnegativity(self, base_dynamics, base_problem, single_kernel,
                                      two_layer_pool):
        solution = solve_grid(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        schedule = evaluate_policy(solution, mean_price_path(base_dynamics, base_problem))
        assert (schedule.trades >= 0).all()
        assert schedule.total() == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_pool_tracks_feedback_solver(self, base_dynamics, base_problem,
                                                    single_kernel):
        cfg = GridConfig(price_points=250, inventory_points=100, impact_points=50)
        pool = TwoLayerPool(1000.0, 1000.0, 1.0)
        solution = solve_grid(cfg, base_dynamics, base_problem, single_kernel, pool)
        path = mean_price_path(base_dynamics, base_problem)
        schedule = evaluate_policy(solution, path)
        reference = simulate_closed_loop(
            closed_loop_coefficients(
                base_dynamics, single_kernel, base_problem, ConstantProductPool(1000.0)
            ),
            path, base_problem, ConstantProductPool(1000.0), single_kernel,
        )
        assert np.abs(schedule.trades - reference.trades).max() < 0.02

    def test_terminal_liquidation_when_threshold_at_initial_price(self, base_dynamics,
                                                                  base_problem, single_kernel):
        cfg = GridConfig(price_points=150, inventory_points=60, impact_points=30)
        pool = TwoLayerPool(1000.0, 500.0, 1.0)
        solution = solve_grid(cfg, base_dynamics, base_problem, single_kernel, pool)
        schedule = evaluate_policy(solution, mean_price_path(base_dynamics, base_problem))
        assert np.abs(schedule.trades[:-1]).max() == 0.0
        assert schedule.trades[-1] == pytest.approx(1.0, abs=1e-12)

    def test_lower_layer_sweep_interpolates_regimes(self, base_dynamics, base_problem,
                                                    single_kernel):
        cfg = GridConfig(price_points=150, inventory_points=60, impact_points=30)
        finals = []
        for lower in (500.0, 800.0, 1000.0):
            pool = TwoLayerPool(1000.0, lower, 1.0)
            solution = solve_grid(cfg, base_dynamics, base_problem, single_kernel, pool)
            schedule = evaluate_policy(solution, mean_price_path(base_dynamics, base_problem))
            finals.append(schedule.trades[-1])
        assert finals[0] == pytest.approx(1.0, abs=1e-12)
        assert finals[0] > finals[1] > finals[2]

    def test_path_validation(self, base_dynamics, base_problem, single_kernel, two_layer_pool):
        solution = solve_grid(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        with pytest.raises(ValueError):
            evaluate_policy(solution, np.ones(3))
        bad = np.ones(11)
        bad[2] = 0.0
        with pytest.raises(ValueError):
            evaluate_policy(solution, bad)


class TestDumpLoad:
    @pytest.mark.parametrize("fmt", ["npz", "json"])
    def test_round_trip(self, tmp_path, base_dynamics, base_problem, single_kernel,
                        two_layer_pool, fmt):
        solution = solve_grid(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        path = mean_price_path(base_dynamics, base_problem)
        schedule = evaluate_policy(solution, path)
        target = tmp_path / f"dump.{fmt}"
        solution.save(str(target), fmt=fmt)
        loaded = GridSolution.load(str(target), fmt=fmt)
        again = evaluate_policy(loaded, path)
        assert np.array_equal(schedule.trades, again.trades)
        assert loaded.config == solution.config
        for a, b in zip(loaded.policies, solution.policies):
            assert np.array_equal(a, b)

    def test_unknown_format_rejected(self, tmp_path, base_dynamics, base_problem,
                                     single_kernel, two_layer_pool):
        solution = solve_grid(SMALL, base_dynamics, base_problem, single_kernel, two_layer_pool)
        with pytest.raises(ValueError):
            solution.save(str(tmp_path / "x.bin"), fmt="bin")
