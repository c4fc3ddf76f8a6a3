"""Scenario generation, scenario streams and the line-delimited scenario log."""

import json
import logging
import os
from dataclasses import asdict, dataclass

import numpy as np

from dynamics import (
    AgentState,
    BoardThresholds,
    DynamicsLimits,
    RewardParams,
    sample_noise,
    step_energy,
)
from errors import DreamrError
from experiment_config import ScenarioConfig
from transit import (
    Action,
    DreamrState,
    VehicleRoute,
    Waypoint,
    apply_interaction,
    carry_rider,
    generate_route,
    step_epoch,
)
from utils import episode_rngs, sha256_text

logger = logging.getLogger(__name__)

LOG_FORMAT_NAME = "dreamr-scenario-log"
LOG_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    """Initial world state and goal of one episode."""

    initial_state: DreamrState
    goal: tuple[float, float]
    seed: int = 0
    episode: int = 0

    @property
    def initial_car_count(self) -> int:
        return self.initial_state.initial_car_count


def generate_scenario(
    config: ScenarioConfig,
    rng: np.random.Generator,
    seed: int = 0,
    episode: int = 0,
    initial_cars: int | None = None,
) -> Scenario:
    """Agent at rest in the workspace centre, goal in a random corner region."""
    side = config.workspace_side
    if initial_cars is None:
        initial_cars = int(rng.integers(config.initial_cars[0], config.initial_cars[1] + 1))
    offsets = rng.uniform(*config.goal_corner_offset, size=2) * side
    corner = rng.integers(0, 2, size=2)
    goal = tuple(
        float(offsets[i] if corner[i] == 0 else side - offsets[i]) for i in range(2)
    )
    routes = {i: generate_route(config, rng, 0.0, i) for i in range(initial_cars)}
    state = DreamrState(
        agent=AgentState(side / 2.0, side / 2.0),
        routes=routes,
        time=0,
        epoch_dt=config.epoch_dt,
        next_vehicle_id=initial_cars,
        initial_car_count=initial_cars,
    )
    return Scenario(state, goal, seed, episode)


class ScenarioStream:
    """Source of the world's evolution, independent of the agent's actions."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario

    def advance(self, state: DreamrState) -> DreamrState:
        raise NotImplementedError


class GeneratedStream(ScenarioStream):
    """Routes evolve by step_epoch under a dedicated scenario RNG."""

    def __init__(self, scenario: Scenario, config: ScenarioConfig, rng: np.random.Generator):
        super().__init__(scenario)
        self.config = config
        self._rng = rng

    @classmethod
    def for_episode(
        cls,
        config: ScenarioConfig,
        seed: int,
        episode: int,
        initial_cars: int | None = None,
    ) -> tuple["GeneratedStream", np.random.Generator]:
        """Build the episode's stream; also returns the agent's noise RNG."""
        scenario_rng, agent_rng = episode_rngs(seed, episode, config.seed)
        scenario = generate_scenario(config, scenario_rng, seed, episode, initial_cars)
        return cls(scenario, config, scenario_rng), agent_rng

    def advance(self, state: DreamrState) -> DreamrState:
        return step_epoch(state, self.config, self._rng)


class ReplayStream(ScenarioStream):
    """Replays recorded per-epoch routes so different planners see identical worlds."""

    def __init__(self, scenario: Scenario, epochs: list[dict[int, VehicleRoute]]):
        super().__init__(scenario)
        self._epochs = epochs

    def advance(self, state: DreamrState) -> DreamrState:
        time = state.time + 1
        if time >= len(self._epochs):
            raise DreamrError(f"Scenario log ends at epoch {len(self._epochs) - 1}")
        routes = dict(self._epochs[time])
        next_id = max(routes, default=state.next_vehicle_id - 1) + 1
        return carry_rider(state, routes, time, max(next_id, state.next_vehicle_id))


@dataclass(frozen=True)
class StepOutcome:
    state: DreamrState
    success: bool
    reward: float
    energy: float
    riding: bool
    acted_agent: AgentState


def simulate_step(
    state: DreamrState,
    action: Action,
    stream: ScenarioStream,
    reward_params: RewardParams,
    agent_rng: np.random.Generator,
    limits: DynamicsLimits = DynamicsLimits(),
    thresholds: BoardThresholds = BoardThresholds(),
    workspace_side: float = np.inf,
) -> StepOutcome:
    """Apply the agent's action, then let the world advance one epoch."""
    # One draw per epoch keeps the agent RNG aligned regardless of action kind.
    noise = sample_noise(agent_rng, limits.sigma_ax, limits.sigma_ay)
    acted, success = apply_interaction(
        state, action, thresholds, limits, noise, workspace_side
    )
    riding = state.riding
    energy = step_energy(state.agent, acted.agent, riding, reward_params)
    reward = -(reward_params.alpha * energy + reward_params.time_cost)
    return StepOutcome(stream.advance(acted), success, reward, energy, riding, acted.agent)


# Scenario log ---------------------------------------------------------------


def _floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _format_waypoint(wp: Waypoint) -> str:
    return ",".join(
        [str(wp.index), _floats(wp.position), _floats((wp.eta,)), str(wp.eta_count)]
        + [_floats((wp.eta_mean, wp.eta_m2))]
    )


def format_epoch(state: DreamrState) -> list[str]:
    """One epoch header line plus one line per active vehicle, ordered by id."""
    lines = [f"epoch:{state.time} vehicles:{len(state.routes)}"]
    for vehicle_id in sorted(state.routes):
        route = state.routes[vehicle_id]
        if route.anchor_position is None:
            anchor = "none"
        else:
            anchor = _floats((*route.anchor_position, route.anchor_time))
        waypoints = ";".join(_format_waypoint(wp) for wp in route.remaining)
        lines.append(
            f"vehicle:{vehicle_id} position:{_floats(route.current_position)} "
            f"anchor:{anchor} waypoints:{waypoints}"
        )
    return lines


def format_header(scenario: Scenario, config: ScenarioConfig) -> list[str]:
    agent = scenario.initial_state.agent
    return [
        f"format:{LOG_FORMAT_NAME}",
        f"version:{LOG_FORMAT_VERSION}",
        f"seed:{scenario.seed}",
        f"episode:{scenario.episode}",
        f"initial_cars:{scenario.initial_car_count}",
        f"goal:{_floats(scenario.goal)}",
        f"agent:{_floats((agent.px, agent.py, agent.vx, agent.vy))}",
        f"config:{json.dumps(asdict(config), sort_keys=True, separators=(',', ':'))}",
    ]


def record_scenario(config: ScenarioConfig, seed: int, episode: int) -> str:
    """Run the generated stream for a full episode and return the log text."""
    stream, _ = GeneratedStream.for_episode(config, seed, episode)
    state = stream.scenario.initial_state
    lines = format_header(stream.scenario, config)
    lines.extend(format_epoch(state))
    for _ in range(config.epochs):
        state = stream.advance(state)
        lines.extend(format_epoch(state))
    return "\n".join(lines) + "\n"


def scenario_hash(text: str) -> str:
    return sha256_text(text)


def write_scenario_log(path: str, text: str) -> tuple[bool, str]:
    """
    Write a scenario log to disk.

    Returns:
        tuple: (success: bool, message: str)
    """
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", newline="\n") as f:
            f.write(text)
        return True, f"Scenario log written to {path}"
    except OSError as e:
        return False, f"Failed to write scenario log: {str(e)}"


def _fields(line: str) -> dict[str, str]:
    return dict(part.split(":", 1) for part in line.split(" "))


def _parse_vehicle(line: str) -> VehicleRoute:
    parts = _fields(line)
    position = tuple(float(v) for v in parts["position"].split(","))
    anchor_position, anchor_time = None, None
    if parts["anchor"] != "none":
        ax, ay, at = (float(v) for v in parts["anchor"].split(","))
        anchor_position, anchor_time = (ax, ay), at
    waypoints = []
    for chunk in parts["waypoints"].split(";"):
        index, x, y, eta, count, mean, m2 = chunk.split(",")
        waypoints.append(
            Waypoint(int(index), (float(x), float(y)), float(eta), int(count), float(mean), float(m2))
        )
    return VehicleRoute(
        int(parts["vehicle"]), position, tuple(waypoints), anchor_position, anchor_time
    )


def parse_scenario_log(text: str) -> tuple[Scenario, ScenarioConfig, list[dict[int, VehicleRoute]]]:
    """Parse log text into the scenario, its config and per-epoch routes.

    Raises:
        DreamrError: if the text is not a supported scenario log.
    """
    header: dict[str, str] = {}
    epochs: list[dict[int, VehicleRoute]] = []
    for line in text.splitlines():
        if not line:
            continue
        if line.startswith("epoch:"):
            epochs.append({})
        elif line.startswith("vehicle:"):
            if not epochs:
                raise DreamrError("Vehicle record before the first epoch record")
            route = _parse_vehicle(line)
            epochs[-1][route.vehicle_id] = route
        else:
            key, value = line.split(":", 1)
            header[key] = value

    if header.get("format") != LOG_FORMAT_NAME:
        raise DreamrError("Not a scenario log")
    if int(header.get("version", -1)) != LOG_FORMAT_VERSION:
        raise DreamrError(f"Unsupported scenario log version: {header.get('version')}")

    config_values = {
        key: tuple(value) if isinstance(value, list) else value
        for key, value in json.loads(header["config"]).items()
    }
    config = ScenarioConfig(**config_values)
    px, py, vx, vy = (float(v) for v in header["agent"].split(","))
    goal = tuple(float(v) for v in header["goal"].split(","))
    initial_cars = int(header["initial_cars"])
    initial = epochs[0] if epochs else {}
    state = DreamrState(
        agent=AgentState(px, py, vx, vy),
        routes=dict(initial),
        time=0,
        epoch_dt=config.epoch_dt,
        next_vehicle_id=max(initial, default=-1) + 1,
        initial_car_count=initial_cars,
    )
    scenario = Scenario(state, goal, int(header["seed"]), int(header["episode"]))
    return scenario, config, epochs


def read_scenario_log(path: str) -> tuple[bool, ReplayStream | None, str]:
    """
    Load a scenario log as a replay stream.

    Returns:
        tuple: (success: bool, stream or None, message: str)
    """
    try:
        with open(path) as f:
            text = f.read()
        scenario, _, epochs = parse_scenario_log(text)
        return True, ReplayStream(scenario, epochs), f"Loaded {len(epochs)} epochs from {path}"
    except FileNotFoundError:
        return False, None, f"Scenario log not found: {path}"
    except (DreamrError, KeyError, ValueError) as e:
        logger.debug("Failed to parse scenario log %s", path, exc_info=True)
        return False, None, f"Invalid scenario log: {e}"
