"""Global open-loop layer: the implicit time-dependent transit graph and A* over it.

Vertices are the active future waypoints of every vehicle plus the agent's
current state (SOURCE) and the goal (GOAL). Edges are generated just in time
while the search expands nodes:

- CONSTRAINED_FLIGHT to any reachable waypoint of another vehicle,
- RIDE along the current vehicle's later waypoints,
- UNCONSTRAINED_FLIGHT straight to GOAL from every expanded node.

A search node is (vertex id, boarded). Arriving at a waypoint by constrained
flight means the agent boards there and may ride; arriving by ride means it
alights there and must fly on.
"""

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from components.constrained_flight import AbortParams, eta_sigma, evaluate_cf
from components.unconstrained_flight import uf_state
from config import ETA_SIGMA_FLOOR
from errors import PlanningError
from experiment_config import ExperimentConfig
from policy_store import PolicySet
from transit import DreamrState

logger = logging.getLogger(__name__)

SOURCE_ID = 0


class VertexKind(Enum):
    SOURCE = "SOURCE"
    WAYPOINT = "WAYPOINT"
    GOAL = "GOAL"


class EdgeKind(Enum):
    CONSTRAINED_FLIGHT = "CF"
    RIDE = "RIDE"
    UNCONSTRAINED_FLIGHT = "UF"


@dataclass(frozen=True)
class GraphVertex:
    vertex_id: int
    kind: VertexKind
    position: tuple[float, float]
    time: float
    vehicle_id: int | None = None
    waypoint_index: int | None = None


@dataclass(frozen=True)
class TransitEdge:
    kind: EdgeKind
    source: GraphVertex
    target: GraphVertex
    weight: float

    @property
    def target_time(self) -> float:
        return self.target.time


@dataclass
class SearchStats:
    vertex_count: int = 0
    expanded: int = 0
    generated: int = 0
    max_frontier: int = 0
    setup_seconds: float = 0.0
    search_seconds: float = 0.0


@dataclass(frozen=True)
class RoutePlan:
    """Edge sequence from SOURCE to GOAL and its total surrogate cost."""

    edges: tuple[TransitEdge, ...]
    cost: float
    stats: SearchStats = field(default_factory=SearchStats, compare=False)

    @property
    def first_edge(self) -> TransitEdge:
        return self.edges[0]

    def describe(self) -> str:
        return " -> ".join(edge.kind.value for edge in self.edges)


@dataclass(frozen=True)
class PlannerSettings:
    alpha: float
    time_unit: float = 1.0
    max_car_speed: float = 50.0
    v_max: float = 20.0
    cf_position_limit: float = math.inf
    lookahead: float = math.inf
    ride_adjacent_only: bool = False
    eta_sigma_floor: float = ETA_SIGMA_FLOOR

    @classmethod
    def from_config(cls, config: ExperimentConfig, alpha: float) -> "PlannerSettings":
        policy = config.policy
        return cls(
            alpha=alpha,
            time_unit=config.scenario.epoch_dt,
            max_car_speed=config.scenario.max_car_speed,
            v_max=config.limits.v_max,
            cf_position_limit=policy.cf_position_limit,
            lookahead=policy.horizon_steps * policy.horizon_dt,
            ride_adjacent_only=config.ride_adjacent_only,
            eta_sigma_floor=policy.eta_sigma_floor,
        )


def ride_edge_cost(tau_from: float, tau_to: float, alpha: float, time_unit: float = 1.0) -> float:
    """Riding costs elapsed time only."""
    return (1.0 - alpha) * (tau_to - tau_from) / time_unit


def heuristic(
    position, goal_position, alpha: float, max_car_speed: float, time_unit: float = 1.0
) -> float:
    """Straight-line time to the goal at the maximum car speed, time-weighted.

    Admissible only while no ride moves faster than max_car_speed.
    """
    if max_car_speed <= 0:
        raise ValueError("max_car_speed must be positive")
    distance = math.hypot(position[0] - goal_position[0], position[1] - goal_position[1])
    return (1.0 - alpha) * distance / max_car_speed / time_unit


class EdgeWeigher:
    """Prices flight edges from encoded relative states (px, vx, py, vy)."""

    def cf_weights(
        self, states: np.ndarray, gaps: np.ndarray, sigmas: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Return (weights, feasible mask) for candidate constrained flights."""
        raise NotImplementedError

    def uf_weights(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ValueFunctionWeigher(EdgeWeigher):
    """Negated macro-policy values as edge weights, with the abort screen at beta."""

    def __init__(self, policies: PolicySet, beta: float):
        self.policies = policies
        self.abort = policies.cf.abort_params(beta)

    @property
    def beta(self) -> float:
        return self.abort.beta

    def cf_weights(self, states, gaps, sigmas):
        result = evaluate_cf(self.policies.cf, states, gaps, sigmas, self.abort)
        return result.weights, ~result.aborts

    def uf_weights(self, states):
        return np.maximum(-self.policies.uf.state_values(states), 0.0)


def flight_edge_weight(
    kind: EdgeKind,
    policies: PolicySet,
    encoded_state,
    time_to_eta: float | None = None,
    sigma: float = ETA_SIGMA_FLOOR,
    abort: AbortParams | None = None,
) -> float:
    """Weight of a single CF or UF edge from its encoded state."""
    states = np.asarray(encoded_state, dtype=float)[None, :]
    if kind is EdgeKind.UNCONSTRAINED_FLIGHT:
        return float(np.maximum(-policies.uf.state_values(states), 0.0)[0])
    if kind is not EdgeKind.CONSTRAINED_FLIGHT or time_to_eta is None:
        raise ValueError("flight_edge_weight needs a CF edge with its time to ETA or a UF edge")
    abort = abort or policies.cf.abort_params(1.0)
    return float(evaluate_cf(policies.cf, states, [time_to_eta], [sigma], abort).weights[0])


class GraphSnapshot:
    """Indexed vertices of G_t plus everything the successor function precomputes."""

    def __init__(
        self,
        state: DreamrState,
        goal,
        weigher: EdgeWeigher,
        settings: PlannerSettings,
    ):
        started = time.perf_counter()
        self.state = state
        self.goal = (float(goal[0]), float(goal[1]))
        self.weigher = weigher
        self.settings = settings
        now = state.now

        positions = [(state.agent.px, state.agent.py)]
        times = [now]
        vehicles = [-1]
        indices = [-1]
        sigmas = [0.0]
        self.vehicle_blocks: dict[int, tuple[int, int]] = {}
        for vehicle_id in sorted(state.routes):
            start = len(positions)
            for wp in state.routes[vehicle_id].remaining:
                if wp.eta <= now:
                    continue
                positions.append(wp.position)
                times.append(wp.eta)
                vehicles.append(vehicle_id)
                indices.append(wp.index)
                sigmas.append(eta_sigma(wp, settings.eta_sigma_floor))
            if len(positions) > start:
                self.vehicle_blocks[vehicle_id] = (start, len(positions))
        positions.append(self.goal)
        times.append(math.inf)
        vehicles.append(-1)
        indices.append(-1)
        sigmas.append(0.0)

        self.positions = np.asarray(positions, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.vehicles = np.asarray(vehicles, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.sigmas = np.asarray(sigmas, dtype=float)
        self.goal_id = len(positions) - 1
        self.block_end = np.zeros(len(positions), dtype=np.int64)
        for start, end in self.vehicle_blocks.values():
            self.block_end[start:end] = end

        waypoint_count = self.goal_id - 1
        self.tree = cKDTree(self.positions[1 : self.goal_id]) if waypoint_count else None

        encoded = np.zeros((len(positions), 4))
        encoded[:, 0] = self.positions[:, 0] - self.goal[0]
        encoded[:, 2] = self.positions[:, 1] - self.goal[1]
        encoded[SOURCE_ID] = uf_state(state.agent, self.goal)
        self.uf_weights = weigher.uf_weights(encoded)
        self.uf_weights[self.goal_id] = 0.0
        # Perturbed ETAs can make a segment faster than max_car_speed.
        self.speed_bound = max(settings.max_car_speed, self._fastest_segment())
        gaps = np.hypot(*(self.positions - np.asarray(self.goal)).T)
        self.heuristics = (
            (1.0 - settings.alpha) * gaps / self.speed_bound / settings.time_unit
        )
        self.setup_seconds = time.perf_counter() - started

    def _fastest_segment(self) -> float:
        fastest = 0.0
        for start, end in self.vehicle_blocks.values():
            if end - start < 2:
                continue
            steps = np.hypot(*np.diff(self.positions[start:end], axis=0).T)
            fastest = max(fastest, float(np.max(steps / np.diff(self.times[start:end]))))
        return fastest

    @property
    def vertex_count(self) -> int:
        return len(self.positions)

    def vertex(self, vertex_id: int) -> GraphVertex:
        if vertex_id == SOURCE_ID:
            kind = VertexKind.SOURCE
        elif vertex_id == self.goal_id:
            kind = VertexKind.GOAL
        else:
            kind = VertexKind.WAYPOINT
        is_waypoint = kind is VertexKind.WAYPOINT
        return GraphVertex(
            vertex_id,
            kind,
            (float(self.positions[vertex_id, 0]), float(self.positions[vertex_id, 1])),
            float(self.times[vertex_id]),
            int(self.vehicles[vertex_id]) if is_waypoint else None,
            int(self.indices[vertex_id]) if is_waypoint else None,
        )

    def source_node(self) -> tuple[int, bool]:
        return SOURCE_ID, self.state.riding

    def _ride_targets(self, vertex_id: int) -> range:
        if vertex_id == SOURCE_ID:
            block = self.vehicle_blocks.get(self.state.riding_on)
            if block is None:
                return range(0)
            start, end = block
        else:
            start, end = vertex_id + 1, int(self.block_end[vertex_id])
        if self.settings.ride_adjacent_only:
            end = min(end, start + 1)
        return range(start, end)

    def _cf_candidates(self, vertex_id: int) -> tuple[np.ndarray, np.ndarray]:
        if self.tree is None:
            return np.empty(0, dtype=np.int64), np.empty(0)
        origin = self.positions[vertex_id]
        radius = self.settings.cf_position_limit
        if math.isfinite(radius):
            found = self.tree.query_ball_point(origin, r=radius)
            targets = np.sort(np.asarray(found, dtype=np.int64)) + 1
        else:
            targets = np.arange(1, self.goal_id, dtype=np.int64)
        gaps = self.times[targets] - self.times[vertex_id]
        distances = np.hypot(*(self.positions[targets] - origin).T)
        keep = (
            (gaps > 0.0)
            & (distances <= self.settings.v_max * gaps)
            & (gaps <= self.settings.lookahead)
        )
        if vertex_id != SOURCE_ID:
            keep &= self.vehicles[targets] != self.vehicles[vertex_id]
        return targets[keep], gaps[keep]

    def expand(self, vertex_id: int, boarded: bool) -> list[tuple[EdgeKind, int, float]]:
        """Successors of a search node as (edge kind, target vertex id, weight)."""
        if vertex_id == self.goal_id:
            return []
        settings = self.settings
        edges: list[tuple[EdgeKind, int, float]] = []

        if boarded:
            tau = self.times[vertex_id]
            for target in self._ride_targets(vertex_id):
                weight = ride_edge_cost(tau, self.times[target], settings.alpha, settings.time_unit)
                edges.append((EdgeKind.RIDE, target, weight))
        else:
            targets, gaps = self._cf_candidates(vertex_id)
            if targets.size:
                states = np.zeros((targets.size, 4))
                states[:, 0] = self.positions[vertex_id, 0] - self.positions[targets, 0]
                states[:, 2] = self.positions[vertex_id, 1] - self.positions[targets, 1]
                if vertex_id == SOURCE_ID:
                    states[:, 1] = self.state.agent.vx
                    states[:, 3] = self.state.agent.vy
                weights, feasible = self.weigher.cf_weights(states, gaps, self.sigmas[targets])
                for target, weight, ok in zip(targets, weights, feasible, strict=True):
                    if ok:
                        edges.append((EdgeKind.CONSTRAINED_FLIGHT, int(target), float(weight)))

        edges.append(
            (EdgeKind.UNCONSTRAINED_FLIGHT, self.goal_id, float(self.uf_weights[vertex_id]))
        )
        return edges

    def successors(self, vertex_id: int, boarded: bool = False) -> list[TransitEdge]:
        source = self.vertex(vertex_id)
        return [
            TransitEdge(kind, source, self.vertex(target), weight)
            for kind, target, weight in self.expand(vertex_id, boarded)
        ]

    @staticmethod
    def arrival_boarded(kind: EdgeKind) -> bool:
        return kind is EdgeKind.CONSTRAINED_FLIGHT


def astar_implicit(snapshot: GraphSnapshot) -> RoutePlan:
    """A* from SOURCE to GOAL with a closed set; ties expand the lower vertex id first.

    Raises:
        PlanningError: if GOAL is unreachable, which the UF edge rules out.
    """
    started = time.perf_counter()
    stats = SearchStats(vertex_count=snapshot.vertex_count, setup_seconds=snapshot.setup_seconds)
    start = snapshot.source_node()
    root = (-1, False)
    h = snapshot.heuristics
    queue = [(h[start[0]], start[0], start[1], 0.0, root)]
    enqueued = {start: 0.0}
    explored: dict[tuple[int, bool], tuple[int, bool]] = {}
    via: dict[tuple[tuple[int, bool], tuple[int, bool]], tuple[EdgeKind, float]] = {}

    while queue:
        _, vertex_id, boarded, cost, parent = heapq.heappop(queue)
        node = (vertex_id, boarded)
        if node in explored:
            continue
        explored[node] = parent
        stats.expanded += 1

        if vertex_id == snapshot.goal_id:
            edges = []
            while parent != root:
                kind, weight = via[(node, parent)]
                edges.append(
                    TransitEdge(kind, snapshot.vertex(parent[0]), snapshot.vertex(node[0]), weight)
                )
                node, parent = parent, explored[parent]
            edges.reverse()
            stats.search_seconds = time.perf_counter() - started
            return RoutePlan(tuple(edges), cost, stats)

        for kind, target, weight in snapshot.expand(vertex_id, boarded):
            stats.generated += 1
            neighbor = (target, GraphSnapshot.arrival_boarded(kind))
            if neighbor in explored:
                continue
            ncost = cost + weight
            if enqueued.get(neighbor, math.inf) <= ncost:
                continue
            enqueued[neighbor] = ncost
            via[(neighbor, node)] = (kind, weight)
            heapq.heappush(queue, (ncost + h[target], target, neighbor[1], ncost, node))
        stats.max_frontier = max(stats.max_frontier, len(queue))

    raise PlanningError("No path to GOAL; the unconstrained flight edge is missing")


class GlobalPlanner:
    """Builds a fresh snapshot and searches it on every call."""

    name = "HHP"

    def __init__(self, weigher: EdgeWeigher, settings: PlannerSettings):
        self.weigher = weigher
        self.settings = settings

    def plan(self, state: DreamrState, goal) -> RoutePlan:
        snapshot = GraphSnapshot(state, goal, self.weigher, self.settings)
        plan = astar_implicit(snapshot)
        logger.debug(
            "Plan at t=%s: %s (cost %.3f, %s expanded)",
            state.now,
            plan.describe(),
            plan.cost,
            plan.stats.expanded,
        )
        return plan


class DirectPlanner(GlobalPlanner):
    """Always the lone UNCONSTRAINED_FLIGHT edge to the goal."""

    name = "DIRECT"

    def plan(self, state: DreamrState, goal) -> RoutePlan:
        started = time.perf_counter()
        source = GraphVertex(
            SOURCE_ID, VertexKind.SOURCE, (state.agent.px, state.agent.py), state.now
        )
        target = GraphVertex(1, VertexKind.GOAL, (float(goal[0]), float(goal[1])), math.inf)
        weight = float(self.weigher.uf_weights(uf_state(state.agent, goal)[None, :])[0])
        stats = SearchStats(vertex_count=2, expanded=1, generated=1, max_frontier=1)
        stats.search_seconds = time.perf_counter() - started
        edge = TransitEdge(EdgeKind.UNCONSTRAINED_FLIGHT, source, target, weight)
        return RoutePlan((edge,), weight, stats)
