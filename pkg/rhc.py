"""Receding horizon control baseline: nominal edge weights and sampled trajectory optimisation."""

import itertools
import logging
import math

import numpy as np

from components.constrained_flight import SuccessSet, terminal_penalty
from dynamics import (
    AgentState,
    ControlAction,
    DynamicsLimits,
    RewardParams,
    integrate_axis,
)
from executor import EpisodeResult, EpisodeRunner, FlightController
from experiment_config import ExperimentConfig, RhcParams
from mdp_kernel import DiscreteActionSet
from planner import EdgeKind, EdgeWeigher, GlobalPlanner, PlannerSettings, ride_edge_cost
from scenario import ScenarioStream
from utils import RHC_STREAM, episode_seed_sequence

logger = logging.getLogger(__name__)


def nominal_edge_weight(
    kind: EdgeKind,
    distance: float,
    alpha: float,
    lambda_d: float,
    v_max: float,
    gap: float | None = None,
    time_unit: float = 1.0,
) -> float:
    """Flight distance and time priced without any policy.

    CF edges pay for their ETA gap, UF edges for the straight-line time at
    v_max, ride edges for elapsed time only.
    """
    if kind is EdgeKind.RIDE:
        return ride_edge_cost(0.0, gap, alpha, time_unit)
    energy = alpha * lambda_d * distance
    if kind is EdgeKind.CONSTRAINED_FLIGHT:
        if gap is None:
            raise ValueError("CF edges need their time gap")
        return energy + (1.0 - alpha) * gap / time_unit
    return energy + (1.0 - alpha) * distance / v_max / time_unit


class NominalWeigher(EdgeWeigher):
    """Nominal weights for every candidate edge; no edge is screened out."""

    def __init__(self, alpha: float, lambda_d: float, v_max: float, time_unit: float = 1.0):
        self.alpha = alpha
        self.lambda_d = lambda_d
        self.v_max = v_max
        self.time_unit = time_unit

    def cf_weights(self, states, gaps, sigmas):
        distance = np.hypot(states[:, 0], states[:, 2])
        weights = self.alpha * self.lambda_d * distance + (1.0 - self.alpha) * np.asarray(
            gaps, dtype=float
        ) / self.time_unit
        return weights, np.ones(len(distance), dtype=bool)

    def uf_weights(self, states):
        distance = np.hypot(states[:, 0], states[:, 2])
        return (
            self.alpha * self.lambda_d * distance
            + (1.0 - self.alpha) * distance / self.v_max / self.time_unit
        )


def rollout_costs(
    relative: AgentState,
    controls: np.ndarray,
    params: RewardParams,
    limits: DynamicsLimits,
    success: SuccessSet,
    phi: float,
) -> np.ndarray:
    """Noise-free rollout cost of each control sequence.

    relative is the agent state with the target at the origin; controls has
    shape (sequences, N, 2). Each step costs its energy plus one time unit
    while outside the terminal set; ending outside the set adds phi plus the
    nominal cost-to-go.
    """
    controls = np.asarray(controls, dtype=float)
    count = controls.shape[0]
    dt = params.timestep
    px = np.full(count, relative.px)
    py = np.full(count, relative.py)
    vx = np.full(count, relative.vx)
    vy = np.full(count, relative.vy)
    costs = np.zeros(count)
    for k in range(controls.shape[1]):
        speed = np.hypot(vx, vy)
        inside = (np.hypot(px, py) <= success.position_tol) & (speed <= success.speed_tol)
        hover = speed < params.hover_speed_eps
        nx, nvx = integrate_axis(px, vx, controls[:, k, 0], dt, limits.v_max)
        ny, nvy = integrate_axis(py, vy, controls[:, k, 1], dt, limits.v_max)
        energy = params.lambda_d * np.hypot(nx - px, ny - py) + params.lambda_h * hover
        costs += params.alpha * energy + params.time_cost * ~inside
        px, py, vx, vy = nx, ny, nvx, nvy

    distance = np.hypot(px, py)
    outside = ~((distance <= success.position_tol) & (np.hypot(vx, vy) <= success.speed_tol))
    to_go = params.alpha * params.lambda_d * distance + params.time_cost * distance / (
        limits.v_max * dt
    )
    return costs + outside * (phi + to_go)


def _enumerate(levels: tuple[float, ...], horizon: int) -> np.ndarray:
    pairs = list(itertools.product(levels, levels))
    return np.array(list(itertools.product(pairs, repeat=horizon)), dtype=float)


def _snap(samples: np.ndarray, levels: tuple[float, ...]) -> np.ndarray:
    grid = np.asarray(levels, dtype=float)
    nearest = np.abs(samples[..., None] - grid).argmin(axis=-1)
    return grid[nearest]


def rhc_plan(
    x: AgentState,
    target,
    horizon: int,
    rhc: RhcParams,
    params: RewardParams,
    limits: DynamicsLimits,
    success: SuccessSet,
    phi: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Best control sequence (horizon, 2) found by enumeration or cross-entropy search.

    The zero sequence is always a candidate, so the result never costs more.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    relative = AgentState(x.px - target[0], x.py - target[1], x.vx, x.vy)
    a_max = limits.a_max

    def evaluate(candidates):
        return rollout_costs(relative, candidates, params, limits, success, phi)

    levels = rhc.levels
    if levels is not None and (len(levels) ** 2) ** horizon <= rhc.population:
        candidates = _enumerate(levels, horizon)
        return candidates[int(np.argmin(evaluate(candidates)))]

    best = np.zeros((horizon, 2))
    best_cost = float(evaluate(best[None])[0])
    mean = np.zeros((horizon, 2))
    std = np.full((horizon, 2), a_max)
    for _ in range(rhc.iterations):
        samples = mean + std * rng.standard_normal((rhc.population, horizon, 2))
        samples = np.clip(samples, -a_max, a_max)
        if levels is not None:
            samples = _snap(samples, levels)
        samples[0] = 0.0
        samples[1] = best
        costs = evaluate(samples)
        order = np.argsort(costs, kind="stable")
        if costs[order[0]] < best_cost:
            best, best_cost = samples[order[0]].copy(), float(costs[order[0]])
        elite = samples[order[: rhc.elite_count]]
        mean = elite.mean(axis=0)
        std = elite.std(axis=0) + 0.01 * a_max
    return best


class RecedingHorizonController(FlightController):
    """Re-solves a short trajectory every epoch and executes its first control."""

    def __init__(self, config: ExperimentConfig, alpha: float, rng: np.random.Generator):
        self.config = config
        self.params = config.reward_params(alpha)
        self.success = SuccessSet.from_thresholds(config.thresholds)
        action_set = DiscreteActionSet.grid(config.limits.a_max, config.policy.action_levels)
        self.phi = terminal_penalty(
            self.params,
            config.policy.horizon_steps,
            action_set,
            config.limits,
            self.params.timestep,
            config.policy.phi_margin,
        )
        self.rng = rng

    def _first_control(self, agent: AgentState, target, horizon: int) -> ControlAction:
        sequence = rhc_plan(
            agent,
            target,
            horizon,
            self.config.rhc,
            self.params,
            self.config.limits,
            self.success,
            self.phi,
            self.rng,
        )
        return ControlAction(float(sequence[0, 0]), float(sequence[0, 1]))

    def constrained(self, state, waypoint, vehicle_id):
        steps = math.ceil((waypoint.eta - state.now) / self.params.timestep)
        horizon = min(max(steps, 1), self.config.policy.horizon_steps)
        return self._first_control(state.agent, waypoint.position, horizon)

    def unconstrained(self, state, goal):
        return self._first_control(state.agent, goal, self.config.rhc.uf_horizon)


def rhc_runner(
    config: ExperimentConfig, alpha: float, episode: int = 0, record_trace: bool = True
) -> EpisodeRunner:
    settings = PlannerSettings.from_config(config, alpha)
    weigher = NominalWeigher(alpha, config.lambda_d, config.limits.v_max, settings.time_unit)
    rng = np.random.default_rng(episode_seed_sequence(config.rhc.seed, episode, RHC_STREAM))
    return EpisodeRunner(
        GlobalPlanner(weigher, settings),
        RecedingHorizonController(config, alpha, rng),
        config,
        alpha,
        record_trace=record_trace,
    )


def run_episode_rhc(
    stream: ScenarioStream,
    config: ExperimentConfig,
    alpha: float,
    agent_rng: np.random.Generator,
    episode: int = 0,
) -> EpisodeResult:
    """Same episode loop as HHP with nominal weights and trajectory optimisation."""
    return rhc_runner(config, alpha, episode).run(stream, agent_rng)
