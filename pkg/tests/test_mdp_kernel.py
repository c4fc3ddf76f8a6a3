"""Tests for grids, interpolation, transition models, value iteration and recombination."""

import math

import numpy as np
import pytest

from dynamics import DynamicsLimits, RewardParams
from errors import ConvergenceError
from mdp_kernel import (
    DiscreteActionSet,
    DoubleIntegratorModel,
    GridTransitionModel,
    InterpGrid,
    QStack,
    bin_termination_times,
    build_grid,
    combine_partial_control,
    cubic_knots,
    double_integrator_dynamics,
    double_integrator_reward,
    finite_horizon_vi,
    horizon_values,
    infinite_horizon_vi,
    interpolate,
    sigma_points,
    standard_normal_quantiles,
    termination_distribution,
)


class TestGrid:
    def test_cubic_knots_cluster_near_zero(self):
        np.testing.assert_allclose(cubic_knots(8.0, 5), [-8.0, -1.0, 0.0, 1.0, 8.0])

    @pytest.mark.parametrize("count", [2, 4, 1])
    def test_cubic_knots_need_odd_count(self, count):
        with pytest.raises(ValueError):
            cubic_knots(1.0, count)

    def test_build_grid_shape(self):
        grid = build_grid((8.0, 2.0), (5, 3))

        assert grid.shape == (5, 3)
        assert grid.size == 15
        assert grid.limits == (8.0, 2.0)
        assert grid.points().shape == (15, 2)

    def test_build_grid_rejects_mismatched_axes(self):
        with pytest.raises(ValueError):
            build_grid((1.0, 2.0), (3,))


class TestInterpolation:
    grid = build_grid((8.0, 27.0), (5, 7))

    def test_exact_at_knots(self):
        rng = np.random.default_rng(0)
        table = rng.normal(size=self.grid.size)

        values = interpolate(self.grid, table, self.grid.points())

        np.testing.assert_allclose(values, table)

    def test_reproduces_multilinear_functions(self):
        points = self.grid.points()
        table = 2.0 * points[:, 0] - 0.5 * points[:, 1] + 0.1 * points[:, 0] * points[:, 1] + 3.0

        value = interpolate(self.grid, table, [3.3, -11.0])

        assert value == pytest.approx(2.0 * 3.3 + 0.5 * 11.0 - 0.1 * 3.3 * 11.0 + 3.0)

    def test_queries_are_clamped_to_the_grid(self):
        points = self.grid.points()
        table = points[:, 0] + points[:, 1]

        assert interpolate(self.grid, table, [100.0, -100.0]) == pytest.approx(8.0 - 27.0)

    def test_trailing_axes_are_carried_through(self):
        points = self.grid.points()
        table = np.stack([points[:, 0], points[:, 1]], axis=1)

        row = interpolate(self.grid, table, [2.0, 3.0])
        batch = interpolate(self.grid, table, [[2.0, 3.0], [0.5, -1.0]])

        np.testing.assert_allclose(row, [2.0, 3.0])
        np.testing.assert_allclose(batch, [[2.0, 3.0], [0.5, -1.0]])

    def test_accepts_tables_shaped_like_the_grid(self):
        points = self.grid.points()
        table = (points[:, 0] * 2.0).reshape(self.grid.shape)

        assert interpolate(self.grid, table, [4.0, 0.0]) == pytest.approx(8.0)


def test_action_grid_puts_zero_first():
    actions = DiscreteActionSet.grid(5.0, 3)

    assert len(actions) == 9
    assert actions.levels == (-5.0, 0.0, 5.0)
    assert actions.action(0).ax == 0.0
    assert actions.action(0).ay == 0.0
    assert len(set(actions.actions)) == 9


def test_sigma_points_match_mean_and_variance():
    points = sigma_points((2.0, 0.5))
    noise = np.array([p for p, _ in points])
    weights = np.array([w for _, w in points])

    assert len(points) == 9
    assert weights.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(weights @ noise, [0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(weights @ noise**2, [4.0, 0.25])


def test_separable_model_matches_generic_model():
    grid = build_grid((300.0, 10.0, 300.0, 10.0), (5, 3, 3, 3))
    actions = DiscreteActionSet.grid(2.0, 3)
    limits = DynamicsLimits(v_max=10.0, a_max=2.0, sigma_ax=0.4, sigma_ay=0.2)
    params = RewardParams(alpha=0.7, hover_speed_eps=0.5)
    separable = DoubleIntegratorModel(grid, actions, 5.0, limits, params)
    generic = GridTransitionModel(
        grid,
        actions.as_array(),
        double_integrator_dynamics(5.0, limits.v_max),
        double_integrator_reward(params),
        sigma_points((limits.sigma_ax, limits.sigma_ay)),
    )
    values = np.random.default_rng(1).normal(size=grid.size)

    np.testing.assert_allclose(separable.rewards(), generic.rewards(), atol=1e-10)
    np.testing.assert_allclose(separable.expected_next(values), generic.expected_next(values), atol=1e-10)


def _chain_model(reward: float = -1.0) -> GridTransitionModel:
    """Five cells on a line; actions stay, step left or step right."""
    grid = InterpGrid((np.arange(5.0),))
    return GridTransitionModel(
        grid,
        [[0.0], [-1.0], [1.0]],
        lambda points, action: points + action,
        lambda points, action, nxt: np.full(len(points), reward),
    )


class TestValueIteration:
    def test_finite_horizon_starts_from_terminal_values(self):
        model = _chain_model()
        terminal = np.array([0.0, -10.0, -10.0, -10.0, -10.0])

        tables = finite_horizon_vi(model, 3, terminal)

        assert tables.shape == (4, 5, 3)
        np.testing.assert_allclose(tables[0], np.repeat(terminal[:, None], 3, axis=1))
        np.testing.assert_allclose(tables[1].max(axis=1), [-1.0, -1.0, -11.0, -11.0, -11.0])

    def test_finite_horizon_values_never_improve_with_more_steps(self):
        grid = build_grid((300.0, 10.0, 300.0, 10.0), (3, 3, 3, 3))
        model = DoubleIntegratorModel(
            grid, DiscreteActionSet.grid(2.0, 3), 5.0, DynamicsLimits(v_max=10.0, a_max=2.0), RewardParams(alpha=0.5)
        )

        tables = finite_horizon_vi(model, 4, np.zeros(grid.size))
        values = tables.max(axis=2)

        assert np.all(np.diff(values, axis=0) <= 1e-12)

    def test_rejects_zero_horizon(self):
        with pytest.raises(ValueError):
            finite_horizon_vi(_chain_model(), 0, np.zeros(5))

    def test_infinite_horizon_shortest_path(self):
        absorbing = np.array([True, False, False, False, False])

        result = infinite_horizon_vi(_chain_model(), absorbing, eps=1e-9, max_backups=100)

        np.testing.assert_allclose(result.values, [0.0, -1.0, -2.0, -3.0, -4.0])
        assert result.policy.tolist() == [0, 1, 1, 1, 1]
        assert result.residuals[-1] < 1e-9
        assert result.backups == len(result.residuals)

    def test_infinite_horizon_raises_without_absorbing_states(self):
        with pytest.raises(ConvergenceError) as context:
            infinite_horizon_vi(_chain_model(), eps=1e-6, max_backups=5)

        assert len(context.value.residuals) == 5


class TestTerminationDistribution:
    def test_quantiles_are_symmetric_and_read_only(self):
        draws = standard_normal_quantiles(10)

        np.testing.assert_allclose(draws, -draws[::-1])
        assert not draws.flags.writeable

    def test_deterministic_eta_lands_in_one_bin(self):
        dist = termination_distribution(10.0, 0.0, horizon=4, horizon_dt=5.0, sample_count=20)

        np.testing.assert_allclose(dist.masses, [0.0, 0.0, 1.0, 0.0, 0.0])
        assert dist.overflow == 0.0

    def test_late_eta_overflows(self):
        dist = termination_distribution(100.0, 1.0, horizon=4, horizon_dt=5.0)

        assert dist.overflow == 1.0
        assert dist.total() == pytest.approx(1.0)

    @pytest.mark.parametrize("gap", [20.0 + 1e-9, 21.0, 22.0, 22.5])
    def test_eta_just_past_horizon_overflows(self, gap):
        dist = termination_distribution(gap, 0.0, horizon=4, horizon_dt=5.0)

        np.testing.assert_allclose(dist.masses, np.zeros(5))
        assert dist.overflow == 1.0

    def test_eta_at_horizon_stays_inside(self):
        dist = termination_distribution(20.0, 0.0, horizon=4, horizon_dt=5.0)

        np.testing.assert_allclose(dist.masses, [0.0, 0.0, 0.0, 0.0, 1.0])
        assert dist.overflow == 0.0

    def test_in_horizon_times_go_to_nearest_step(self):
        # 17.4 s -> k=3, 17.6 s -> k=4, 19.9 s -> k=4
        times = np.array([[17.4, 17.6, 19.9, 20.1]])

        masses, overflow = bin_termination_times(times, 4, 5.0)

        np.testing.assert_allclose(masses[0], [0.0, 0.0, 0.0, 0.25, 0.5])
        assert overflow[0] == pytest.approx(0.25)

    def test_past_eta_terminates_now(self):
        dist = termination_distribution(-7.0, 0.0, horizon=4, horizon_dt=5.0)

        assert dist.masses[0] == 1.0

    def test_spread_eta_sums_to_one(self):
        dist = termination_distribution(12.0, 4.0, horizon=4, horizon_dt=5.0, sample_count=50)

        assert dist.total() == pytest.approx(1.0)
        assert np.count_nonzero(dist.masses) > 1

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError):
            termination_distribution(1.0, -1.0, 4, 5.0)


class TestPartialControl:
    grid = InterpGrid((np.array([0.0, 1.0]),))

    def _stack(self) -> QStack:
        tables = np.zeros((3, 2, 2))
        tables[1, :, 0] = -2.0
        tables[1, :, 1] = -1.0
        tables[2, :, 0] = [-4.0, -6.0]
        tables[2, :, 1] = [-8.0, -8.0]
        out_of_horizon = np.full((2, 2), -20.0)
        return QStack(self.grid, tables, out_of_horizon, 5.0)

    def test_single_horizon_picks_that_q(self):
        dist = termination_distribution(5.0, 0.0, 2, 5.0)

        action, value = combine_partial_control(self._stack(), dist, [0.5])

        assert action == 1
        assert value == pytest.approx(-1.0)

    def test_mixture_weights_horizons(self):
        dist = termination_distribution(7.5, 2.5, 2, 5.0, sample_count=2)

        action, value = combine_partial_control(self._stack(), dist, [0.5])

        # Half the mass at k=1, half at k=2.
        np.testing.assert_allclose(dist.masses, [0.0, 0.5, 0.5])
        assert action == 0
        assert value == pytest.approx(0.5 * -2.0 + 0.5 * -5.0)

    def test_overflow_uses_out_of_horizon_values(self):
        dist = termination_distribution(60.0, 0.0, 2, 5.0)

        action, value = combine_partial_control(self._stack(), dist, [0.0])

        assert action == 0
        assert value == pytest.approx(-20.0)

    def test_horizon_values_take_the_best_action(self):
        values = horizon_values(self._stack(), np.array([1, 2]), np.array([[0.0], [1.0]]))

        np.testing.assert_allclose(values, [-1.0, -6.0])
        assert math.isclose(self._stack().worst_values()[2], -8.0)
