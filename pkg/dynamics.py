"""Agent state, bounded double-integrator dynamics and the DREAMR reward."""

import math
from dataclasses import dataclass

import numpy as np

from config import (
    A_MAX,
    BOARD_DIST,
    BOARD_SPEED,
    HOVER_SPEED_EPS,
    LAMBDA_D,
    LAMBDA_H,
    NOISE_SIGMA,
    TIMESTEP,
    V_MAX,
)


@dataclass(frozen=True)
class AgentState:
    """Planar point-mass state: position (m) and velocity (m/s)."""

    px: float
    py: float
    vx: float = 0.0
    vy: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])

    @property
    def velocity(self) -> np.ndarray:
        return np.array([self.vx, self.vy])

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    def distance_to(self, point) -> float:
        return math.hypot(self.px - point[0], self.py - point[1])

    def at_rest_at(self, point) -> "AgentState":
        """Return a copy placed at point with zero velocity."""
        return AgentState(float(point[0]), float(point[1]), 0.0, 0.0)


@dataclass(frozen=True)
class ControlAction:
    """Acceleration command (m/s^2) applied for one timestep."""

    ax: float = 0.0
    ay: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.ax, self.ay])


ZERO_ACTION = ControlAction()


@dataclass(frozen=True)
class DynamicsLimits:
    """Per-axis velocity/acceleration bounds and actuation noise."""

    v_max: float = V_MAX
    a_max: float = A_MAX
    sigma_ax: float = NOISE_SIGMA
    sigma_ay: float = NOISE_SIGMA


@dataclass(frozen=True)
class BoardThresholds:
    """BOARD preconditions; also the CF success set and the goal tolerance."""

    board_dist: float = BOARD_DIST
    board_speed: float = BOARD_SPEED


@dataclass(frozen=True)
class RewardParams:
    """Weights of the energy + time step reward."""

    alpha: float
    lambda_d: float = LAMBDA_D
    lambda_h: float = LAMBDA_H
    hover_speed_eps: float = HOVER_SPEED_EPS
    timestep: float = TIMESTEP

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got: {self.alpha}")
        if self.lambda_d < 0 or self.lambda_h < 0:
            raise ValueError("lambda_d and lambda_h must be non-negative")
        if self.hover_speed_eps <= 0:
            raise ValueError("hover_speed_eps must be positive")
        if self.timestep <= 0:
            raise ValueError("timestep must be positive")

    @property
    def time_cost(self) -> float:
        """Cost of one elapsed timestep, independent of energy."""
        return 1.0 - self.alpha


def integrate_axis(p, v, a, dt: float, v_max: float):
    """Exact double-integrator update along one axis.

    Works element-wise on scalars or numpy arrays. Position integrates the
    unclamped velocity over the step; velocity is clamped afterwards.
    """
    p_next = p + v * dt + 0.5 * a * dt * dt
    v_next = np.clip(v + a * dt, -v_max, v_max)
    return p_next, v_next


def clamp_action(u: ControlAction, a_max: float = A_MAX) -> ControlAction:
    """Clamp each acceleration component into [-a_max, a_max]."""
    return ControlAction(
        min(max(u.ax, -a_max), a_max),
        min(max(u.ay, -a_max), a_max),
    )


def step_dynamics(
    x: AgentState,
    u: ControlAction,
    dt: float,
    noise=None,
    limits: DynamicsLimits = DynamicsLimits(),
) -> AgentState:
    """Advance the agent by dt under acceleration u plus additive noise.

    The command is clamped before the noise is added, so noise can still push
    the effective acceleration past a_max.
    """
    u = clamp_action(u, limits.a_max)
    nx, ny = (0.0, 0.0) if noise is None else (float(noise[0]), float(noise[1]))
    px, vx = integrate_axis(x.px, x.vx, u.ax + nx, dt, limits.v_max)
    py, vy = integrate_axis(x.py, x.vy, u.ay + ny, dt, limits.v_max)
    return AgentState(float(px), float(py), float(vx), float(vy))


def sample_noise(rng: np.random.Generator, sigma_ax: float, sigma_ay: float):
    """Draw independent zero-mean Gaussian acceleration noise per axis."""
    return rng.normal(0.0, (sigma_ax, sigma_ay))


def clamp_to_workspace(x: AgentState, side: float) -> AgentState:
    """Keep the agent inside [0, side]^2, stopping motion into a wall."""
    px, vx = x.px, x.vx
    py, vy = x.py, x.vy
    if px < 0.0 or px > side:
        px, vx = min(max(px, 0.0), side), 0.0
    if py < 0.0 or py > side:
        py, vy = min(max(py, 0.0), side), 0.0
    return AgentState(px, py, vx, vy)


def is_hovering(x: AgentState, hover_speed_eps: float) -> bool:
    return x.speed < hover_speed_eps


def step_energy(
    x_t: AgentState, x_t1: AgentState, riding: bool, params: RewardParams
) -> float:
    """Energy units spent over one step: distance flown plus hover time."""
    if riding:
        return 0.0
    distance = math.hypot(x_t1.px - x_t.px, x_t1.py - x_t.py)
    hover = 1.0 if is_hovering(x_t, params.hover_speed_eps) else 0.0
    return params.lambda_d * distance + params.lambda_h * hover


def reward(
    x_t: AgentState, x_t1: AgentState, riding: bool, params: RewardParams
) -> float:
    """Single-step reward (always <= 0) weighting energy by alpha and time by 1 - alpha."""
    energy = step_energy(x_t, x_t1, riding, params)
    return -(params.alpha * energy + params.time_cost)
