"""Constrained flight macro-action: rendezvous with a vehicle waypoint before its ETA."""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from config import ETA_SIGMA_FLOOR, PHI_MARGIN
from dynamics import BoardThresholds, ControlAction, DynamicsLimits, RewardParams
from experiment_config import PolicyConfig
from mdp_kernel import (
    SIGMA_OFFSETS,
    DiscreteActionSet,
    DoubleIntegratorModel,
    InterpGrid,
    QStack,
    bin_termination_times,
    build_grid,
    finite_horizon_vi,
    horizon_values,
    infinite_horizon_vi,
    mixture_values,
    standard_normal_quantiles,
)
from transit import Waypoint

logger = logging.getLogger(__name__)


class FlightSignal(Enum):
    ABORT = "ABORT"


ABORT = FlightSignal.ABORT


@dataclass(frozen=True)
class CFState:
    """Agent position relative to the target waypoint, agent velocity, time to ETA."""

    rel_px: float
    rel_py: float
    vx: float
    vy: float
    time_to_eta: float

    @classmethod
    def from_agent(cls, agent, target_position, eta: float, now: float) -> "CFState":
        return cls(
            agent.px - target_position[0],
            agent.py - target_position[1],
            agent.vx,
            agent.vy,
            eta - now,
        )

    @property
    def controlled(self) -> np.ndarray:
        """s_c in grid axis order (px, vx, py, vy)."""
        return np.array([self.rel_px, self.vx, self.rel_py, self.vy])


@dataclass(frozen=True)
class SuccessSet:
    position_tol: float
    speed_tol: float

    @classmethod
    def from_thresholds(cls, thresholds: BoardThresholds) -> "SuccessSet":
        return cls(thresholds.board_dist, thresholds.board_speed)

    def contains(self, s_c) -> np.ndarray:
        """Membership for one or many (px, vx, py, vy) states."""
        s = np.atleast_2d(s_c)
        close = np.hypot(s[:, 0], s[:, 2]) <= self.position_tol
        slow = np.hypot(s[:, 1], s[:, 3]) <= self.speed_tol
        inside = close & slow
        return inside if np.ndim(s_c) > 1 else bool(inside[0])

    def grid_mask(self, grid: InterpGrid) -> np.ndarray:
        return self.contains(grid.points())


@dataclass(frozen=True, eq=False)
class AbortParams:
    beta: float
    worst_values: np.ndarray  # V_min(k), k = 0..K

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got: {self.beta}")


@dataclass(frozen=True, eq=False)
class CFPolicy:
    """Solved constrained-flight policy: Q stack, penalty and termination settings."""

    qstack: QStack
    action_set: DiscreteActionSet
    phi: float
    success: SuccessSet
    eps_cf: float
    eta_sample_count: int
    eta_sigma_floor: float = ETA_SIGMA_FLOOR

    @cached_property
    def worst_values(self) -> np.ndarray:
        return self.qstack.worst_values()

    def abort_params(self, beta: float) -> AbortParams:
        return AbortParams(beta, self.worst_values)

    @property
    def lookahead(self) -> float:
        return self.qstack.horizon * self.qstack.horizon_dt


def max_step_energy(
    limits: DynamicsLimits, params: RewardParams, dt: float, a_max: float
) -> float:
    """Upper bound on one step's energy over the velocity/action/noise box."""
    reach = max(SIGMA_OFFSETS)
    dx = limits.v_max * dt + 0.5 * (a_max + reach * limits.sigma_ax) * dt * dt
    dy = limits.v_max * dt + 0.5 * (a_max + reach * limits.sigma_ay) * dt * dt
    return params.lambda_d * math.hypot(dx, dy) + params.lambda_h


def terminal_penalty(
    params: RewardParams,
    horizon: int,
    action_set: DiscreteActionSet,
    limits: DynamicsLimits = DynamicsLimits(),
    dt: float | None = None,
    margin: float = PHI_MARGIN,
) -> float:
    """phi = K * (max step reward - min step reward) + margin.

    Step rewards lie in [-(alpha * E_max + 1 - alpha), -(1 - alpha)], so the
    gap is alpha * E_max.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    dt = params.timestep if dt is None else dt
    a_max = max(abs(level) for level in action_set.levels)
    gap = params.alpha * max_step_energy(limits, params, dt, a_max)
    return horizon * gap + margin


def cf_terminal_values(grid: InterpGrid, success: SuccessSet, phi: float) -> np.ndarray:
    return np.where(success.grid_mask(grid), 0.0, -phi)


def solve_cf(
    config: PolicyConfig,
    limits: DynamicsLimits,
    params: RewardParams,
    thresholds: BoardThresholds = BoardThresholds(),
) -> CFPolicy:
    """Offline partial-control VI for the controlled CF subproblem."""
    grid = build_grid(
        (config.cf_position_limit, limits.v_max, config.cf_position_limit, limits.v_max),
        (
            config.cf_position_knots,
            config.velocity_knots,
            config.cf_position_knots,
            config.velocity_knots,
        ),
    )
    action_set = DiscreteActionSet.grid(limits.a_max, config.action_levels)
    model = DoubleIntegratorModel(grid, action_set, config.horizon_dt, limits, params)
    success = SuccessSet.from_thresholds(thresholds)
    phi = terminal_penalty(
        params, config.horizon_steps, action_set, limits, config.horizon_dt, config.phi_margin
    )
    logger.info(
        "Solving CF policy: %s states, %s actions, K=%s, phi=%.3f",
        grid.size,
        len(action_set),
        config.horizon_steps,
        phi,
    )
    tables = finite_horizon_vi(model, config.horizon_steps, cf_terminal_values(grid, success, phi))
    out_of_horizon = infinite_horizon_vi(
        model, success.grid_mask(grid), config.vi_eps, config.vi_max_backups
    ).q_values
    return CFPolicy(
        QStack(grid, tables, out_of_horizon, config.horizon_dt),
        action_set,
        phi,
        success,
        config.eps_cf,
        config.eta_sample_count,
        config.eta_sigma_floor,
    )


def eta_sigma(waypoint: Waypoint, floor: float = ETA_SIGMA_FLOOR) -> float:
    """Spread of the observed ETAs; the floor applies until two have been seen."""
    if waypoint.eta_count < 2:
        return floor
    return waypoint.eta_std


def abort_horizons(policy: CFPolicy, time_to_eta) -> np.ndarray:
    """k = round(s_u / horizon_dt) clamped to [1, K]."""
    qstack = policy.qstack
    k = np.rint(np.asarray(time_to_eta, dtype=float) / qstack.horizon_dt).astype(np.int64)
    return np.clip(k, 1, qstack.horizon)


@dataclass(frozen=True, eq=False)
class CFEvaluation:
    best_actions: np.ndarray
    values: np.ndarray  # mixture value at the best action
    aborts: np.ndarray  # True where the abort rule fires

    @property
    def weights(self) -> np.ndarray:
        """Edge weights: negated values, never below zero."""
        return np.maximum(-self.values, 0.0)


def evaluate_cf(
    policy: CFPolicy,
    states: np.ndarray,
    time_to_eta: np.ndarray,
    sigmas: np.ndarray,
    abort: AbortParams,
) -> CFEvaluation:
    """Batched mixture values and abort tests for many (s_c, s_u, sigma) rows."""
    qstack = policy.qstack
    states = np.atleast_2d(states)
    time_to_eta = np.atleast_1d(np.asarray(time_to_eta, dtype=float))
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    draws = standard_normal_quantiles(policy.eta_sample_count)
    times = time_to_eta[:, None] + sigmas[:, None] * draws[None, :]
    masses, overflow = bin_termination_times(times, qstack.horizon, qstack.horizon_dt)
    mixtures = mixture_values(qstack, masses, overflow, states)
    best = np.argmax(mixtures, axis=1)
    values = mixtures[np.arange(len(best)), best]

    horizons = abort_horizons(policy, time_to_eta)
    worst = abort.worst_values[horizons]
    # Interpolated values cannot leave [V_min(k), 0]; clip away rounding.
    current = np.clip(horizon_values(qstack, horizons, states), worst, 0.0)
    aborts = current < abort.beta * worst
    return CFEvaluation(best, values, aborts)


def cf_action(
    state: CFState, policy: CFPolicy, waypoint: Waypoint, abort: AbortParams
) -> ControlAction | FlightSignal:
    """Abort test at the rounded horizon, else the partial-control argmax."""
    sigma = eta_sigma(waypoint, policy.eta_sigma_floor)
    result = evaluate_cf(
        policy, state.controlled[None, :], [state.time_to_eta], [sigma], abort
    )
    if result.aborts[0]:
        logger.debug("CF abort at s_u=%.1f s, beta=%s", state.time_to_eta, abort.beta)
        return ABORT
    return policy.action_set.action(int(result.best_actions[0]))
