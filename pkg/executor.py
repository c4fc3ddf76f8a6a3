"""Closed-loop episode driver interleaving global replanning with macro-action execution."""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from components.constrained_flight import ABORT, CFState, FlightSignal, cf_action
from components.ride import ride_action
from components.unconstrained_flight import uf_action
from dynamics import AgentState, BoardThresholds, ControlAction, RewardParams, step_energy
from experiment_config import ExperimentConfig
from planner import (
    DirectPlanner,
    EdgeKind,
    GlobalPlanner,
    PlannerSettings,
    RoutePlan,
    SearchStats,
    TransitEdge,
    ValueFunctionWeigher,
)
from policy_store import PolicySet
from scenario import ScenarioStream, simulate_step
from transit import Action, Board, DreamrState, Interaction, Waypoint

logger = logging.getLogger(__name__)


class Mode(Enum):
    FLIGHT = "FLIGHT"
    RIDE = "RIDE"


def mode_of(state: DreamrState) -> Mode:
    return Mode.RIDE if state.riding else Mode.FLIGHT


@dataclass
class ExecutorState:
    mode: Mode
    plan: RoutePlan | None = None
    last_plan_time: int = 0
    plan_flag: bool = True


@dataclass(frozen=True)
class TraceRecord:
    """One simulated epoch: pre-step agent, post-action agent, action and outcome."""

    epoch: int
    agent: AgentState
    next_agent: AgentState
    riding: bool
    action: str
    success: bool
    reward: float
    energy: float
    mode: Mode
    edge: str

    def to_line(self) -> str:
        a, n = self.agent, self.next_agent
        return (
            f"epoch:{self.epoch} agent:{a.px!r},{a.py!r},{a.vx!r},{a.vy!r} "
            f"next:{n.px!r},{n.py!r},{n.vx!r},{n.vy!r} riding:{int(self.riding)} "
            f"action:{self.action} ok:{int(self.success)} reward:{self.reward!r} "
            f"energy:{self.energy!r} mode:{self.mode.value} edge:{self.edge}"
        )


@dataclass
class EpisodeMetrics:
    energy: float = 0.0
    time_to_goal: float = 0.0
    success: bool = False
    reward: float = 0.0
    hop_attempts: int = 0
    hop_successes: int = 0
    aborts: int = 0
    plans: int = 0
    flight_distance: float = 0.0
    epochs: int = 0


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    trace: list[TraceRecord] = field(default_factory=list)
    searches: list[tuple[int, SearchStats]] = field(default_factory=list)

    def trace_lines(self) -> list[str]:
        return [record.to_line() for record in self.trace]


def energy_accumulator(trace: list[TraceRecord], params: RewardParams) -> float:
    """Energy units over a trace; riding steps contribute nothing."""
    return sum(
        step_energy(record.agent, record.next_agent, record.riding, params)
        for record in trace
    )


def at_goal(state: DreamrState, goal, thresholds: BoardThresholds) -> bool:
    """Goal reached: flying, within board distance and at most board speed."""
    if state.riding:
        return False
    agent = state.agent
    return (
        agent.distance_to(goal) <= thresholds.board_dist
        and agent.speed <= thresholds.board_speed
    )


def edge_label(edge: TransitEdge | None) -> str:
    if edge is None:
        return "none"
    target = edge.target
    if target.vehicle_id is None:
        return edge.kind.value
    return f"{edge.kind.value}:{target.vehicle_id}/{target.waypoint_index}"


def action_label(action: Action) -> str:
    if isinstance(action, Board):
        return f"BOARD:{action.vehicle_id}"
    if isinstance(action, Interaction):
        return action.value
    return f"{action.ax!r},{action.ay!r}"


class FlightController:
    """Local closed-loop layer for the two flight macro-actions."""

    def constrained(
        self, state: DreamrState, waypoint: Waypoint, vehicle_id: int
    ) -> ControlAction | FlightSignal:
        raise NotImplementedError

    def unconstrained(self, state: DreamrState, goal) -> ControlAction:
        raise NotImplementedError


class MacroPolicyController(FlightController):
    """Offline CF/UF macro-policies with the abort rule at beta."""

    def __init__(self, policies: PolicySet, beta: float):
        self.policies = policies
        self.abort = policies.cf.abort_params(beta)

    def constrained(self, state, waypoint, vehicle_id):
        cf_state = CFState.from_agent(state.agent, waypoint.position, waypoint.eta, state.now)
        return cf_action(cf_state, self.policies.cf, waypoint, self.abort)

    def unconstrained(self, state, goal):
        return uf_action(state.agent, goal, self.policies.uf)


class EpisodeRunner:
    """Runs one episode: plan, dispatch the first edge, simulate, set triggers."""

    def __init__(
        self,
        planner: GlobalPlanner,
        controller: FlightController,
        config: ExperimentConfig,
        alpha: float,
        eps_cf: float | None = None,
        record_trace: bool = True,
    ):
        self.planner = planner
        self.controller = controller
        self.config = config
        self.reward_params = config.reward_params(alpha)
        self.eps_cf = config.policy.eps_cf if eps_cf is None else eps_cf
        self.record_trace = record_trace

    def _plan(self, state: DreamrState, goal, ex: ExecutorState, result: EpisodeResult):
        ex.plan = self.planner.plan(state, goal)
        ex.last_plan_time = state.time
        ex.plan_flag = False
        result.metrics.plans += 1
        result.searches.append((state.time, ex.plan.stats))

    def _dispatch(
        self, state: DreamrState, goal, edge: TransitEdge
    ) -> Action | FlightSignal | None:
        """Action for the executing edge, or None when the edge no longer applies."""
        target = edge.target
        if edge.kind is EdgeKind.UNCONSTRAINED_FLIGHT:
            if state.riding:
                return Interaction.ALIGHT
            return self.controller.unconstrained(state, goal)

        if edge.kind is EdgeKind.RIDE:
            if not state.riding:
                return None
            return ride_action(state, target.vehicle_id, target.waypoint_index, self.eps_cf)

        if state.riding:
            return Interaction.ALIGHT
        route = state.routes.get(target.vehicle_id)
        waypoint = route.waypoint(target.waypoint_index) if route else None
        if waypoint is None:
            return None
        if waypoint.eta - state.now < self.eps_cf:
            return Board(target.vehicle_id)
        return self.controller.constrained(state, waypoint, target.vehicle_id)

    def _choose_action(
        self, state: DreamrState, goal, ex: ExecutorState, result: EpisodeResult
    ) -> tuple[Action, TransitEdge | None]:
        aborted = False
        stale = False
        while True:
            if ex.plan_flag or ex.plan is None:
                self._plan(state, goal, ex, result)
                replanned = True
            else:
                replanned = False
            edge = ex.plan.first_edge
            action = self._dispatch(state, goal, edge)

            if action is ABORT:
                result.metrics.aborts += 1
                if aborted:
                    logger.debug("Second abort at epoch %s; flying toward the goal", state.time)
                    return self.controller.unconstrained(state, goal), edge
                aborted = True
                ex.plan_flag = True
                continue
            if action is None:
                if stale or replanned:
                    logger.warning(
                        "Fresh plan starts with an inapplicable %s edge; flying toward the goal",
                        edge.kind.value,
                    )
                    return self.controller.unconstrained(state, goal), edge
                stale = True
                ex.plan_flag = True
                continue
            return action, edge

    def run(self, stream: ScenarioStream, agent_rng: np.random.Generator) -> EpisodeResult:
        scenario = stream.scenario
        goal = scenario.goal
        config = self.config
        state = scenario.initial_state
        ex = ExecutorState(mode_of(state))
        result = EpisodeResult(EpisodeMetrics())
        metrics = result.metrics

        for _ in range(config.scenario.epochs):
            if at_goal(state, goal, config.thresholds):
                metrics.success = True
                break

            action, edge = self._choose_action(state, goal, ex, result)
            outcome = simulate_step(
                state,
                action,
                stream,
                self.reward_params,
                agent_rng,
                config.limits,
                config.thresholds,
                config.scenario.workspace_side,
            )
            acted = outcome.state
            if isinstance(action, Board):
                metrics.hop_attempts += 1
                if outcome.success:
                    metrics.hop_successes += 1
                else:
                    logger.debug("BOARD on vehicle %s failed at epoch %s", action.vehicle_id, state.time)
                    ex.plan_flag = True

            next_agent = outcome.acted_agent
            if self.record_trace:
                result.trace.append(
                    TraceRecord(
                        state.time,
                        state.agent,
                        next_agent,
                        outcome.riding,
                        action_label(action),
                        outcome.success,
                        outcome.reward,
                        outcome.energy,
                        ex.mode,
                        edge_label(edge),
                    )
                )
            metrics.energy += outcome.energy
            metrics.reward += outcome.reward
            if not outcome.riding:
                metrics.flight_distance += state.agent.distance_to((next_agent.px, next_agent.py))
            metrics.epochs += 1

            mode = mode_of(acted)
            if mode is not ex.mode:
                ex.mode = mode
                ex.plan_flag = True
            if acted.time - ex.last_plan_time >= config.replan_period:
                ex.plan_flag = True
            state = acted
        else:
            metrics.success = at_goal(state, goal, config.thresholds)

        metrics.time_to_goal = state.now if metrics.success else config.scenario.epochs * state.epoch_dt
        return result


def hhp_runner(
    config: ExperimentConfig,
    policies: PolicySet,
    alpha: float,
    beta: float,
    record_trace: bool = True,
) -> EpisodeRunner:
    settings = PlannerSettings.from_config(config, alpha)
    planner = GlobalPlanner(ValueFunctionWeigher(policies, beta), settings)
    return EpisodeRunner(
        planner, MacroPolicyController(policies, beta), config, alpha, record_trace=record_trace
    )


def direct_runner(
    config: ExperimentConfig, policies: PolicySet, alpha: float, record_trace: bool = True
) -> EpisodeRunner:
    settings = PlannerSettings.from_config(config, alpha)
    planner = DirectPlanner(ValueFunctionWeigher(policies, 1.0), settings)
    return EpisodeRunner(
        planner, MacroPolicyController(policies, 1.0), config, alpha, record_trace=record_trace
    )


def run_episode(
    stream: ScenarioStream,
    policies: PolicySet,
    config: ExperimentConfig,
    alpha: float,
    beta: float,
    agent_rng: np.random.Generator,
    replan_period: int | None = None,
) -> EpisodeResult:
    """HHP episode with the offline policies for alpha and the abort screen at beta."""
    if replan_period is not None:
        config = replace(config, replan_period=replan_period)
    return hhp_runner(config, policies, alpha, beta).run(stream, agent_rng)
