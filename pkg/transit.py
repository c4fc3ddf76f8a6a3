"""Transit vehicle routes, the streaming route update scheme and agent-vehicle interactions."""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from config import PERTURB_REDRAWS, ROUTE_GENERATION_RETRIES, TIMESTEP
from dynamics import (
    ZERO_ACTION,
    AgentState,
    BoardThresholds,
    ControlAction,
    DynamicsLimits,
    clamp_to_workspace,
    step_dynamics,
)
from errors import RouteGenerationError
from experiment_config import ScenarioConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Waypoint:
    """A fixed route point with its current ETA and running ETA statistics."""

    index: int
    position: tuple[float, float]
    eta: float
    eta_count: int = 1
    eta_mean: float = 0.0
    eta_m2: float = 0.0

    @classmethod
    def create(cls, index: int, position, eta: float) -> "Waypoint":
        return cls(index, (float(position[0]), float(position[1])), float(eta), 1, float(eta))

    def observe(self, eta: float) -> "Waypoint":
        """Record a new ETA estimate (Welford update of mean and M2)."""
        count = self.eta_count + 1
        delta = eta - self.eta_mean
        mean = self.eta_mean + delta / count
        m2 = self.eta_m2 + delta * (eta - mean)
        return replace(self, eta=float(eta), eta_count=count, eta_mean=mean, eta_m2=m2)

    @property
    def eta_std(self) -> float:
        """Standard deviation of every ETA observed so far."""
        if self.eta_count < 2:
            return 0.0
        return math.sqrt(max(self.eta_m2, 0.0) / self.eta_count)


@dataclass(frozen=True)
class VehicleRoute:
    """A vehicle's current position and its remaining timestamped waypoints."""

    vehicle_id: int
    current_position: tuple[float, float]
    remaining: tuple[Waypoint, ...]
    anchor_position: tuple[float, float] | None = None
    anchor_time: float | None = None

    def waypoint(self, index: int) -> Waypoint | None:
        for wp in self.remaining:
            if wp.index == index:
                return wp
        return None


@dataclass(frozen=True)
class DreamrState:
    """Full system state: agent, active routes, riding indicator and epoch."""

    agent: AgentState
    routes: dict[int, VehicleRoute] = field(default_factory=dict)
    riding_on: int | None = None
    time: int = 0
    epoch_dt: float = TIMESTEP
    next_vehicle_id: int = 0
    initial_car_count: int = 0

    @property
    def now(self) -> float:
        return self.time * self.epoch_dt

    @property
    def riding(self) -> bool:
        return self.riding_on is not None


class Interaction(Enum):
    ALIGHT = "ALIGHT"
    NOOP = "NOOP"


@dataclass(frozen=True)
class Board:
    vehicle_id: int


Action = ControlAction | Board | Interaction


def _points_along(polyline: np.ndarray, count: int) -> np.ndarray:
    """Place count points at equal arc length along a polyline (first and last included)."""
    segments = np.diff(polyline, axis=0)
    cumulative = np.concatenate([[0.0], np.cumsum(np.hypot(segments[:, 0], segments[:, 1]))])
    targets = np.linspace(0.0, cumulative[-1], count)
    xs = np.interp(targets, cumulative, polyline[:, 0])
    ys = np.interp(targets, cumulative, polyline[:, 1])
    return np.column_stack([xs, ys])


def generate_route(
    config: ScenarioConfig,
    rng: np.random.Generator,
    spawn_time: float,
    vehicle_id: int = 0,
) -> VehicleRoute:
    """Sample a straight or L-shaped route with equally spaced waypoints.

    Raises:
        RouteGenerationError: if no sample satisfies the endpoint separation
            and car speed constraints within the retry budget.
    """
    side = config.workspace_side
    for _ in range(ROUTE_GENERATION_RETRIES):
        start = rng.uniform(0.0, side, size=2)
        end = rng.uniform(0.0, side, size=2)
        if math.hypot(*(end - start)) < config.min_endpoint_separation:
            continue
        count = int(rng.integers(config.route_waypoints[0], config.route_waypoints[1] + 1))
        duration = float(rng.uniform(*config.route_duration))
        if rng.random() < 0.5:
            polyline = np.array([start, end])
        else:
            corner = (end[0], start[1]) if rng.random() < 0.5 else (start[0], end[1])
            polyline = np.array([start, corner, end])
        length = float(np.sum(np.hypot(*np.diff(polyline, axis=0).T)))
        if length > config.max_car_speed * duration:
            continue

        positions = _points_along(polyline, count)
        first_eta = spawn_time + config.epoch_dt
        etas = first_eta + duration * np.arange(count) / (count - 1)
        waypoints = tuple(
            Waypoint.create(i, positions[i], etas[i]) for i in range(count)
        )
        return VehicleRoute(vehicle_id, waypoints[0].position, waypoints)

    raise RouteGenerationError(
        f"No route satisfied separation >= {config.min_endpoint_separation} m "
        f"within {ROUTE_GENERATION_RETRIES} attempts"
    )


def _perturbed_eta(
    eta: float, low: float, high: float, bound: float, rng: np.random.Generator
) -> float:
    """Perturb eta within +-bound keeping it strictly inside (low, high)."""
    candidate = eta
    for _ in range(1 + PERTURB_REDRAWS):
        candidate = eta + rng.uniform(-bound, bound)
        if low < candidate < high:
            return candidate
    # Clip toward the interior; eta itself lies inside so the bound still holds.
    margin = min(1e-3, (eta - low) / 2.0, (high - eta) / 2.0)
    return min(max(candidate, low + margin), high - margin)


def route_position(route: VehicleRoute, now: float) -> tuple[float, float]:
    """Linear-in-time position along the anchor and remaining waypoints."""
    points = [wp.position for wp in route.remaining]
    times = [wp.eta for wp in route.remaining]
    if route.anchor_position is not None:
        points.insert(0, route.anchor_position)
        times.insert(0, route.anchor_time)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    return float(np.interp(now, times, xs)), float(np.interp(now, times, ys))


def advance_route(
    route: VehicleRoute, now: float, config: ScenarioConfig, rng: np.random.Generator
) -> VehicleRoute:
    """Perturb future ETAs, retire stale waypoints and move the vehicle to time now."""
    remaining = route.remaining
    updated: list[Waypoint] = []
    previous_eta = -math.inf
    for i, wp in enumerate(remaining):
        if wp.eta <= now:
            # Arrived: the ETA is an observation, not an estimate.
            updated.append(wp)
            previous_eta = wp.eta
            continue
        eta = wp.eta
        if rng.random() < config.perturb_probability:
            high = remaining[i + 1].eta if i + 1 < len(remaining) else math.inf
            eta = _perturbed_eta(
                wp.eta, max(previous_eta, now), high, config.perturb_bound, rng
            )
        updated.append(wp.observe(eta))
        previous_eta = eta

    anchor_position, anchor_time = route.anchor_position, route.anchor_time
    stale_before = now - config.epoch_dt
    kept = []
    for wp in updated:
        if wp.eta < stale_before:
            anchor_position, anchor_time = wp.position, wp.eta
        else:
            kept.append(wp)

    moved = VehicleRoute(
        route.vehicle_id, route.current_position, tuple(kept), anchor_position, anchor_time
    )
    if kept:
        moved = replace(moved, current_position=route_position(moved, now))
    elif anchor_position is not None:
        moved = replace(moved, current_position=anchor_position)
    return moved


def spawn_count(state: DreamrState, config: ScenarioConfig, rng: np.random.Generator) -> int:
    """New cars this epoch; the expected total reaches the cap at mid-episode."""
    initial = state.initial_car_count
    extra = (config.max_cars_multiplier - 1) * initial
    if extra <= 0:
        return 0
    probability = min(1.0, 2.0 / config.epochs)
    drawn = int(rng.binomial(extra, probability))
    room = config.max_cars_multiplier * initial - len(state.routes)
    return max(0, min(drawn, room))


def step_epoch(
    state: DreamrState, config: ScenarioConfig, rng: np.random.Generator
) -> DreamrState:
    """Advance every vehicle by one epoch, spawn new ones and carry a riding agent."""
    time = state.time + 1
    now = time * state.epoch_dt
    routes: dict[int, VehicleRoute] = {}
    for vehicle_id in sorted(state.routes):
        moved = advance_route(state.routes[vehicle_id], now, config, rng)
        if moved.remaining:
            routes[vehicle_id] = moved

    next_id = state.next_vehicle_id
    staged = replace(state, routes=routes)
    for _ in range(spawn_count(staged, config, rng)):
        routes[next_id] = generate_route(config, rng, now, next_id)
        next_id += 1

    return carry_rider(state, routes, time, next_id)


def carry_rider(
    state: DreamrState, routes: dict[int, VehicleRoute], time: int, next_vehicle_id: int
) -> DreamrState:
    """Install the next epoch's routes, moving a riding agent with its vehicle."""
    agent = state.agent
    riding_on = state.riding_on
    if riding_on is not None:
        if riding_on in routes:
            agent = agent.at_rest_at(routes[riding_on].current_position)
        else:
            logger.warning(
                "Vehicle %s finished its route with the agent aboard; alighting", riding_on
            )
            agent = agent.at_rest_at(state.routes[riding_on].remaining[-1].position)
            riding_on = None
    return replace(
        state,
        agent=agent,
        routes=routes,
        riding_on=riding_on,
        time=time,
        next_vehicle_id=next_vehicle_id,
    )


def board_precondition(
    agent: AgentState, vehicle: VehicleRoute, thresholds: BoardThresholds = BoardThresholds()
) -> bool:
    """True if the agent is close enough to the vehicle and slow enough to board."""
    close = agent.distance_to(vehicle.current_position) <= thresholds.board_dist
    return close and agent.speed <= thresholds.board_speed


def apply_interaction(
    state: DreamrState,
    action: Action,
    thresholds: BoardThresholds = BoardThresholds(),
    limits: DynamicsLimits = DynamicsLimits(),
    noise=None,
    workspace_side: float = math.inf,
) -> tuple[DreamrState, bool]:
    """Apply one agent action; failures are flagged and leave the state unchanged.

    Returns:
        tuple: (next state, success flag)
    """
    if isinstance(action, Board):
        route = state.routes.get(action.vehicle_id)
        if state.riding or route is None or not board_precondition(
            state.agent, route, thresholds
        ):
            return state, False
        agent = state.agent.at_rest_at(route.current_position)
        return replace(state, agent=agent, riding_on=action.vehicle_id), True

    if action is Interaction.ALIGHT:
        if not state.riding:
            return state, False
        route = state.routes[state.riding_on]
        agent = state.agent.at_rest_at(route.current_position)
        return replace(state, agent=agent, riding_on=None), True

    if action is Interaction.NOOP:
        if state.riding:
            return state, True
        action = ZERO_ACTION

    if state.riding:
        # Passengers cannot fly.
        return state, False

    agent = step_dynamics(state.agent, action, state.epoch_dt, noise, limits)
    return replace(state, agent=clamp_to_workspace(agent, workspace_side)), True
