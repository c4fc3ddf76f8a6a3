"""Tests for route generation, the streaming ETA updates and agent-vehicle interactions."""

import math
from dataclasses import replace

import numpy as np
import pytest

from dynamics import AgentState, BoardThresholds, ControlAction
from errors import RouteGenerationError
from experiment_config import ScenarioConfig
from tests.support import TINY_SCENARIO, make_route, make_state
from transit import (
    Board,
    Interaction,
    Waypoint,
    advance_route,
    apply_interaction,
    board_precondition,
    generate_route,
    route_position,
    spawn_count,
    step_epoch,
)

STILL = replace(TINY_SCENARIO, perturb_probability=0.0, max_cars_multiplier=1)


def test_waypoint_observe_tracks_running_statistics():
    wp = Waypoint.create(0, (0, 0), 10.0)

    updated = wp.observe(12.0)

    assert updated.eta == 12.0
    assert updated.eta_count == 2
    assert updated.eta_mean == pytest.approx(11.0)
    assert updated.eta_std == pytest.approx(1.0)
    assert wp.eta_std == 0.0


class TestGenerateRoute:
    def test_routes_satisfy_sampling_constraints(self):
        rng = np.random.default_rng(7)
        for vehicle_id in range(20):
            route = generate_route(TINY_SCENARIO, rng, spawn_time=50.0, vehicle_id=vehicle_id)
            etas = [wp.eta for wp in route.remaining]
            first, last = route.remaining[0], route.remaining[-1]

            assert route.vehicle_id == vehicle_id
            assert 3 <= len(route.remaining) <= 6
            assert etas[0] == pytest.approx(55.0)
            assert all(b > a for a, b in zip(etas, etas[1:], strict=False))
            assert 100.0 <= etas[-1] - etas[0] <= 300.0 + 1e-9
            assert math.dist(first.position, last.position) >= 500.0 - 1e-6
            assert route.current_position == first.position
            for wp in route.remaining:
                assert 0.0 <= wp.position[0] <= 2000.0
                assert 0.0 <= wp.position[1] <= 2000.0

    def test_waypoints_are_equally_spaced_in_time(self):
        route = generate_route(TINY_SCENARIO, np.random.default_rng(1), spawn_time=0.0)
        gaps = np.diff([wp.eta for wp in route.remaining])

        np.testing.assert_allclose(gaps, gaps[0])

    def test_impossible_separation_raises(self):
        config = ScenarioConfig(workspace_side=100.0, min_endpoint_separation=1_000.0)

        with pytest.raises(RouteGenerationError):
            generate_route(config, np.random.default_rng(0), spawn_time=0.0)


class TestAdvanceRoute:
    route = make_route(0, [(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)], [10.0, 20.0, 30.0])

    def test_vehicle_moves_linearly_between_waypoints(self):
        moved = advance_route(self.route, 15.0, STILL, np.random.default_rng(0))

        assert moved.current_position == pytest.approx((50.0, 0.0))
        assert [wp.index for wp in moved.remaining] == [0, 1, 2]
        # Future waypoints record a new (unchanged) estimate; passed ones do not.
        assert moved.waypoint(0).eta_count == 1
        assert moved.waypoint(1).eta_count == 2

    def test_stale_waypoints_become_the_anchor(self):
        rng = np.random.default_rng(0)
        moved = advance_route(advance_route(self.route, 15.0, STILL, rng), 20.0, STILL, rng)

        assert [wp.index for wp in moved.remaining] == [1, 2]
        assert moved.anchor_position == (0.0, 0.0)
        assert moved.anchor_time == 10.0
        assert moved.current_position == pytest.approx((100.0, 0.0))

    def test_perturbations_stay_bounded_and_ordered(self):
        config = replace(STILL, perturb_probability=1.0, perturb_bound=5.0)
        route = make_route(0, [(i * 10.0, 0.0) for i in range(8)], [10.0 + 3.0 * i for i in range(8)])
        rng = np.random.default_rng(11)

        for now in (0.0, 5.0, 10.0):
            moved = advance_route(route, now, config, rng)
            before = {wp.index: wp.eta for wp in route.remaining}
            etas = [wp.eta for wp in moved.remaining]

            assert all(b > a for a, b in zip(etas, etas[1:], strict=False))
            for wp in moved.remaining:
                assert abs(wp.eta - before[wp.index]) <= 5.0 + 1e-9
                if before[wp.index] > now:
                    assert wp.eta > now
            route = moved

    def test_route_position_uses_anchor_before_first_waypoint(self):
        route = make_route(0, [(100.0, 0.0), (200.0, 0.0)], [10.0, 20.0], anchor=(0.0, 0.0), anchor_time=0.0)

        assert route_position(route, 5.0) == pytest.approx((50.0, 0.0))


class TestStepEpoch:
    def test_rider_moves_with_vehicle(self):
        route = make_route(0, [(0.0, 0.0), (100.0, 0.0), (200.0, 0.0)], [0.0, 10.0, 20.0])
        state = make_state(AgentState(0.0, 0.0), [route], riding_on=0)

        nxt = step_epoch(state, STILL, np.random.default_rng(0))

        assert nxt.time == 1
        assert nxt.riding_on == 0
        assert (nxt.agent.px, nxt.agent.py) == pytest.approx((50.0, 0.0))
        assert nxt.agent.speed == 0.0

    def test_finished_route_drops_rider_at_last_waypoint(self):
        route = make_route(0, [(0.0, 0.0), (40.0, 0.0)], [1.0, 2.0])
        state = make_state(AgentState(40.0, 0.0), [route], riding_on=0, time=1)

        nxt = step_epoch(state, STILL, np.random.default_rng(0))

        assert nxt.routes == {}
        assert nxt.riding_on is None
        assert (nxt.agent.px, nxt.agent.py) == (40.0, 0.0)

    def test_spawn_count_is_zero_for_a_fixed_fleet(self):
        routes = [make_route(i, [(0.0, 0.0), (1.0, 0.0)], [100.0, 200.0]) for i in range(3)]
        state = make_state(AgentState(0.0, 0.0), routes)

        assert spawn_count(state, STILL, np.random.default_rng(0)) == 0

    def test_spawn_count_never_exceeds_the_cap(self):
        config = replace(STILL, max_cars_multiplier=2, epochs=2)
        routes = [make_route(i, [(0.0, 0.0), (1.0, 0.0)], [100.0, 200.0]) for i in range(3)]
        state = make_state(AgentState(0.0, 0.0), routes)

        assert spawn_count(state, config, np.random.default_rng(0)) == 3
        assert spawn_count(replace(state, routes={}), config, np.random.default_rng(0)) <= 6

    def test_spawned_vehicles_get_fresh_ids(self):
        config = replace(STILL, max_cars_multiplier=2, epochs=2)
        routes = [make_route(i, [(0.0, 0.0), (1.0, 0.0)], [100.0, 200.0]) for i in range(3)]
        state = make_state(AgentState(0.0, 0.0), routes)

        nxt = step_epoch(state, config, np.random.default_rng(0))

        assert sorted(nxt.routes) == [0, 1, 2, 3, 4, 5]
        assert nxt.next_vehicle_id == 6


class TestInteractions:
    route = make_route(0, [(10.0, 0.0), (500.0, 0.0)], [50.0, 100.0])

    def test_board_precondition_checks_distance_and_speed(self):
        thresholds = BoardThresholds(board_dist=20.0, board_speed=2.0)

        assert board_precondition(AgentState(0.0, 0.0), self.route, thresholds)
        assert not board_precondition(AgentState(-15.0, 0.0), self.route, thresholds)
        assert not board_precondition(AgentState(0.0, 0.0, 3.0, 0.0), self.route, thresholds)

    def test_board_snaps_agent_to_vehicle(self):
        state = make_state(AgentState(0.0, 0.0, 1.0, 0.0), [self.route])

        nxt, ok = apply_interaction(state, Board(0))

        assert ok
        assert nxt.riding_on == 0
        assert nxt.agent == AgentState(10.0, 0.0, 0.0, 0.0)

    @pytest.mark.parametrize(
        "agent, riding_on, vehicle_id",
        [
            (AgentState(300.0, 0.0), None, 0),  # too far
            (AgentState(0.0, 0.0), None, 9),  # unknown vehicle
            (AgentState(10.0, 0.0), 0, 0),  # already aboard
        ],
    )
    def test_failed_board_leaves_state_unchanged(self, agent, riding_on, vehicle_id):
        state = make_state(agent, [self.route], riding_on=riding_on)

        nxt, ok = apply_interaction(state, Board(vehicle_id))

        assert not ok
        assert nxt is state

    def test_alight_requires_riding(self):
        state = make_state(AgentState(0.0, 0.0), [self.route])

        nxt, ok = apply_interaction(state, Interaction.ALIGHT)

        assert not ok
        assert nxt is state

    def test_alight_leaves_agent_at_rest_at_vehicle(self):
        state = make_state(AgentState(10.0, 0.0), [self.route], riding_on=0)

        nxt, ok = apply_interaction(state, Interaction.ALIGHT)

        assert ok
        assert not nxt.riding
        assert nxt.agent == AgentState(10.0, 0.0, 0.0, 0.0)

    def test_riding_agent_cannot_fly(self):
        state = make_state(AgentState(10.0, 0.0), [self.route], riding_on=0)

        _, ok = apply_interaction(state, ControlAction(1.0, 0.0))
        nxt, noop_ok = apply_interaction(state, Interaction.NOOP)

        assert not ok
        assert noop_ok
        assert nxt is state

    def test_noop_in_flight_applies_zero_acceleration(self):
        state = make_state(AgentState(0.0, 0.0, 2.0, 0.0), [self.route])

        nxt, ok = apply_interaction(state, Interaction.NOOP)

        assert ok
        assert nxt.agent == AgentState(10.0, 0.0, 2.0, 0.0)

    def test_flight_is_clamped_to_workspace(self):
        state = make_state(AgentState(5.0, 5.0, -10.0, 0.0), [self.route])

        nxt, ok = apply_interaction(state, ControlAction(0.0, 0.0), workspace_side=1000.0)

        assert ok
        assert nxt.agent.px == 0.0
        assert nxt.agent.vx == 0.0
