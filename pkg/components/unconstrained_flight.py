"""Unconstrained flight macro-action: fly to the static goal with no deadline."""

import logging
from dataclasses import dataclass

import numpy as np

from dynamics import AgentState, BoardThresholds, ControlAction, DynamicsLimits, RewardParams
from experiment_config import PolicyConfig
from mdp_kernel import (
    DiscreteActionSet,
    DoubleIntegratorModel,
    InterpGrid,
    build_grid,
    infinite_horizon_vi,
    interpolation_weights,
)

from .constrained_flight import SuccessSet

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class UFPolicy:
    grid: InterpGrid
    action_set: DiscreteActionSet
    values: np.ndarray
    q_values: np.ndarray
    policy: np.ndarray
    success: SuccessSet

    def interpolated_q(self, states: np.ndarray) -> np.ndarray:
        idx, w = interpolation_weights(self.grid, states)
        return np.einsum("ec,eca->ea", w, self.q_values[idx])

    def state_values(self, states: np.ndarray) -> np.ndarray:
        return self.interpolated_q(states).max(axis=1)


def uf_state(agent: AgentState, goal) -> np.ndarray:
    """Goal-relative state in grid order (px, vx, py, vy)."""
    return np.array([agent.px - goal[0], agent.vx, agent.py - goal[1], agent.vy])


def solve_uf(
    config: PolicyConfig,
    limits: DynamicsLimits,
    params: RewardParams,
    thresholds: BoardThresholds = BoardThresholds(),
) -> UFPolicy:
    grid = build_grid(
        (config.uf_position_limit, limits.v_max, config.uf_position_limit, limits.v_max),
        (
            config.uf_position_knots,
            config.velocity_knots,
            config.uf_position_knots,
            config.velocity_knots,
        ),
    )
    action_set = DiscreteActionSet.grid(limits.a_max, config.action_levels)
    model = DoubleIntegratorModel(grid, action_set, config.horizon_dt, limits, params)
    success = SuccessSet.from_thresholds(thresholds)
    logger.info("Solving UF policy: %s states, %s actions", grid.size, len(action_set))
    result = infinite_horizon_vi(
        model, success.grid_mask(grid), config.vi_eps, config.vi_max_backups
    )
    logger.info("UF policy converged after %s backups", result.backups)
    return UFPolicy(grid, action_set, result.values, result.q_values, result.policy, success)


def uf_action(agent: AgentState, goal, policy: UFPolicy) -> ControlAction:
    """Greedy action on the interpolated Q at the goal-relative state."""
    q = policy.interpolated_q(uf_state(agent, goal)[None, :])[0]
    return policy.action_set.action(int(np.argmax(q)))


def uf_value(agent: AgentState, goal, policy: UFPolicy) -> float:
    return float(policy.state_values(uf_state(agent, goal)[None, :])[0])
