"""Approximate dynamic programming on cubic-scaled multilinear grids.

Holds the grid and interpolation primitives, the transition models that
turn dynamics into expected next-state values, finite- and infinite-horizon
value iteration, termination-time distributions and the partial-control
recombination of horizon-indexed action values.
"""

import itertools
import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

from dynamics import ControlAction, DynamicsLimits, RewardParams, integrate_axis
from errors import ConvergenceError

logger = logging.getLogger(__name__)

# Per-axis 3-point rule matching a Gaussian's mean and variance.
SIGMA_OFFSETS = (0.0, -math.sqrt(3.0), math.sqrt(3.0))
SIGMA_WEIGHTS = (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0)


@dataclass(frozen=True, eq=False)
class InterpGrid:
    """Rectilinear grid; knots[i] is the strictly increasing knot vector of axis i."""

    knots: tuple[np.ndarray, ...]

    @property
    def ndim(self) -> int:
        return len(self.knots)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(k) for k in self.knots)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def limits(self) -> tuple[float, ...]:
        return tuple(float(k[-1]) for k in self.knots)

    def points(self) -> np.ndarray:
        """All knots as an (size, ndim) array in C order."""
        mesh = np.meshgrid(*self.knots, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def cubic_knots(limit: float, count: int) -> np.ndarray:
    """Knots sign(u)|u|^3 * limit for u evenly spaced in [-1, 1]."""
    if count < 3 or count % 2 == 0:
        raise ValueError(f"Knot count must be odd and >= 3, got: {count}")
    steps = np.arange(count) * 2 - (count - 1)
    u = steps / (count - 1)
    return np.sign(u) * np.abs(u) ** 3 * float(limit)


def build_grid(limits: Sequence[float], knots: Sequence[int]) -> InterpGrid:
    if len(limits) != len(knots):
        raise ValueError("limits and knots must have one entry per axis")
    return InterpGrid(tuple(cubic_knots(lim, n) for lim, n in zip(limits, knots, strict=True)))


def interpolation_weights(grid: InterpGrid, queries) -> tuple[np.ndarray, np.ndarray]:
    """Corner indices and multilinear weights for each query point.

    Queries outside the grid are clamped to its bounds.

    Returns:
        tuple: (flat indices of shape (m, 2**ndim), weights of the same shape)
    """
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    strides = np.cumprod((1,) + grid.shape[::-1][:-1])[::-1]
    lows, fracs = [], []
    for axis, knots in enumerate(grid.knots):
        x = np.clip(q[:, axis], knots[0], knots[-1])
        hi = np.clip(np.searchsorted(knots, x, side="right"), 1, len(knots) - 1)
        lo = hi - 1
        lows.append(lo)
        fracs.append((x - knots[lo]) / (knots[hi] - knots[lo]))

    corners = 2**grid.ndim
    indices = np.empty((q.shape[0], corners), dtype=np.int64)
    weights = np.empty((q.shape[0], corners))
    for c, bits in enumerate(itertools.product((0, 1), repeat=grid.ndim)):
        flat = np.zeros(q.shape[0], dtype=np.int64)
        weight = np.ones(q.shape[0])
        for axis, bit in enumerate(bits):
            flat += (lows[axis] + bit) * strides[axis]
            weight *= fracs[axis] if bit else 1.0 - fracs[axis]
        indices[:, c] = flat
        weights[:, c] = weight
    return indices, weights


def interpolate(grid: InterpGrid, table, query):
    """Multilinear interpolation of table (values at grid points, C order).

    Trailing table axes (e.g. one column per action) are carried through.
    A single query returns a scalar or a 1-D row; a batch returns one row per query.
    """
    values = np.asarray(table, dtype=float)
    if values.shape[: grid.ndim] == grid.shape:
        values = values.reshape((grid.size,) + values.shape[grid.ndim :])
    idx, w = interpolation_weights(grid, query)
    result = np.einsum("mc,mc...->m...", w, values[idx])
    if np.ndim(query) == 1:
        result = result[0]
        return float(result) if np.ndim(result) == 0 else result
    return result


@dataclass(frozen=True)
class DiscreteActionSet:
    """Acceleration grid over [-a_max, a_max]^2, zero action first."""

    levels: tuple[float, ...]
    pairs: tuple[tuple[int, int], ...]

    @classmethod
    def grid(cls, a_max: float, levels_per_axis: int) -> "DiscreteActionSet":
        if levels_per_axis < 3 or levels_per_axis % 2 == 0:
            raise ValueError("levels_per_axis must be odd and >= 3")
        levels = tuple(float(v) for v in np.linspace(-a_max, a_max, levels_per_axis))
        mid = levels_per_axis // 2
        levels = levels[:mid] + (0.0,) + levels[mid + 1 :]
        pairs = [(mid, mid)] + [
            (i, j)
            for i in range(levels_per_axis)
            for j in range(levels_per_axis)
            if (i, j) != (mid, mid)
        ]
        return cls(levels, tuple(pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def action(self, index: int) -> ControlAction:
        i, j = self.pairs[index]
        return ControlAction(self.levels[i], self.levels[j])

    @property
    def actions(self) -> tuple[ControlAction, ...]:
        return tuple(self.action(i) for i in range(len(self)))

    def as_array(self) -> np.ndarray:
        return np.array([[self.levels[i], self.levels[j]] for i, j in self.pairs])


def sigma_points(sigmas: Sequence[float]) -> list[tuple[np.ndarray, float]]:
    """Joint sigma points (noise vector, weight) as the product of the per-axis rule."""
    points = []
    for combo in itertools.product(range(len(SIGMA_OFFSETS)), repeat=len(sigmas)):
        noise = np.array([SIGMA_OFFSETS[c] * s for c, s in zip(combo, sigmas, strict=True)])
        weight = float(np.prod([SIGMA_WEIGHTS[c] for c in combo]))
        points.append((noise, weight))
    return points


class GridTransitionModel:
    """Expected rewards and next-state values for arbitrary grid dynamics.

    dynamics(points, action) maps an (n, ndim) batch to next states;
    reward(points, action, next_points) returns the per-point step reward.
    Noise (if any) is added to the action at each sigma point.
    """

    def __init__(
        self,
        grid: InterpGrid,
        actions,
        dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray],
        reward: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
        noise: Sequence[tuple[np.ndarray, float]] | None = None,
    ):
        self.grid = grid
        self.actions = np.atleast_2d(np.asarray(actions, dtype=float))
        if self.actions.shape[0] == 1 and np.ndim(actions) == 1:
            self.actions = self.actions.T
        noise = noise or [(np.zeros(self.actions.shape[1]), 1.0)]
        points = grid.points()
        self._rewards = np.zeros((grid.size, len(self.actions)))
        self._transitions: list[list[tuple[np.ndarray, np.ndarray, float]]] = []
        for a, action in enumerate(self.actions):
            branches = []
            for offset, weight in noise:
                nxt = dynamics(points, action + offset)
                self._rewards[:, a] += weight * reward(points, action, nxt)
                idx, w = interpolation_weights(grid, nxt)
                branches.append((idx, w, weight))
            self._transitions.append(branches)

    @property
    def action_count(self) -> int:
        return len(self.actions)

    def rewards(self) -> np.ndarray:
        return self._rewards

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        out = np.zeros((self.grid.size, self.action_count))
        for a, branches in enumerate(self._transitions):
            for idx, w, weight in branches:
                out[:, a] += weight * np.sum(w * values[idx], axis=1)
        return out


class DoubleIntegratorModel:
    """Separable model for the planar double integrator on a (px, vx, py, vy) grid.

    The axes evolve independently, so E[V(s')] under action (ax, ay) equals
    Tx[ax] @ V.reshape(nx, ny) @ Ty[ay].T with one dense operator per axis
    and acceleration level.
    """

    def __init__(
        self,
        grid: InterpGrid,
        action_set: DiscreteActionSet,
        dt: float,
        limits: DynamicsLimits,
        reward_params: RewardParams,
    ):
        if grid.ndim != 4:
            raise ValueError("DoubleIntegratorModel needs a (px, vx, py, vy) grid")
        self.grid = grid
        self.action_set = action_set
        self.dt = dt
        self.limits = limits
        self.reward_params = reward_params
        self._x_axis = InterpGrid(grid.knots[0:2])
        self._y_axis = InterpGrid(grid.knots[2:4])
        self._tx = self._axis_operators(self._x_axis, limits.sigma_ax)
        self._ty = self._axis_operators(self._y_axis, limits.sigma_ay)
        self._rewards = self._expected_rewards()

    @property
    def action_count(self) -> int:
        return len(self.action_set)

    def _axis_operators(self, axis_grid: InterpGrid, sigma: float) -> list[np.ndarray]:
        points = axis_grid.points()
        n = axis_grid.size
        rows = np.repeat(np.arange(n), 4)
        operators = []
        for level in self.action_set.levels:
            op = np.zeros((n, n))
            for offset, weight in zip(SIGMA_OFFSETS, SIGMA_WEIGHTS, strict=True):
                p, v = integrate_axis(
                    points[:, 0], points[:, 1], level + offset * sigma, self.dt, self.limits.v_max
                )
                idx, w = interpolation_weights(axis_grid, np.column_stack([p, v]))
                np.add.at(op, (rows, idx.ravel()), weight * w.ravel())
            operators.append(op)
        return operators

    def _axis_displacements(self, velocities: np.ndarray, sigma: float) -> np.ndarray:
        """Displacement per (velocity knot, level, sigma point)."""
        levels = np.asarray(self.action_set.levels)
        offsets = np.asarray(SIGMA_OFFSETS) * sigma
        accel = levels[None, :, None] + offsets[None, None, :]
        return velocities[:, None, None] * self.dt + 0.5 * accel * self.dt**2

    def _expected_rewards(self) -> np.ndarray:
        params = self.reward_params
        vx_knots, vy_knots = self.grid.knots[1], self.grid.knots[3]
        dx = self._axis_displacements(vx_knots, self.limits.sigma_ax)
        dy = self._axis_displacements(vy_knots, self.limits.sigma_ay)
        weights = np.asarray(SIGMA_WEIGHTS)
        # distance[vx, vy, lx, ly] averaged over the joint sigma points
        dist = np.hypot(dx[:, None, :, None, :, None], dy[None, :, None, :, None, :])
        dist = np.einsum("abcdst,s,t->abcd", dist, weights, weights)
        speed = np.hypot(vx_knots[:, None], vy_knots[None, :])
        hover = (speed < params.hover_speed_eps).astype(float)

        pairs = np.asarray(self.action_set.pairs)
        energy = params.lambda_d * dist[:, :, pairs[:, 0], pairs[:, 1]] + params.lambda_h * hover[
            :, :, None
        ]
        reward = -(params.alpha * energy + params.time_cost)
        npx, nvx, npy, nvy = self.grid.shape
        full = np.broadcast_to(
            reward[None, :, None, :, :], (npx, nvx, npy, nvy, len(pairs))
        )
        return np.ascontiguousarray(full).reshape(self.grid.size, len(pairs))

    def rewards(self) -> np.ndarray:
        return self._rewards

    def expected_next(self, values: np.ndarray) -> np.ndarray:
        nx, ny = self._x_axis.size, self._y_axis.size
        table = values.reshape(nx, ny)
        left = [op @ table for op in self._tx]
        out = np.empty((self.grid.size, self.action_count))
        for a, (lx, ly) in enumerate(self.action_set.pairs):
            out[:, a] = (left[lx] @ self._ty[ly].T).ravel()
        return out


def double_integrator_dynamics(dt: float, v_max: float):
    """Grid dynamics callable for GridTransitionModel over (px, vx, py, vy)."""

    def step(points: np.ndarray, action: np.ndarray) -> np.ndarray:
        px, vx = integrate_axis(points[:, 0], points[:, 1], action[0], dt, v_max)
        py, vy = integrate_axis(points[:, 2], points[:, 3], action[1], dt, v_max)
        return np.column_stack([px, vx, py, vy])

    return step


def double_integrator_reward(params: RewardParams):
    def reward(points: np.ndarray, action: np.ndarray, nxt: np.ndarray) -> np.ndarray:
        dist = np.hypot(nxt[:, 0] - points[:, 0], nxt[:, 2] - points[:, 2])
        hover = np.hypot(points[:, 1], points[:, 3]) < params.hover_speed_eps
        energy = params.lambda_d * dist + params.lambda_h * hover
        return -(params.alpha * energy + params.time_cost)

    return reward


@dataclass(frozen=True, eq=False)
class QStack:
    """Horizon-indexed action values Q_0..Q_K plus the out-of-horizon table."""

    grid: InterpGrid
    tables: np.ndarray  # (K + 1, grid.size, actions)
    out_of_horizon: np.ndarray  # (grid.size, actions)
    horizon_dt: float

    @property
    def horizon(self) -> int:
        return self.tables.shape[0] - 1

    @property
    def action_count(self) -> int:
        return self.tables.shape[2]

    def values(self, k: int) -> np.ndarray:
        return self.tables[k].max(axis=1)

    def worst_values(self) -> np.ndarray:
        """V_min(k) for k = 0..K: lowest Q over every grid point and action."""
        return self.tables.min(axis=(1, 2))


def finite_horizon_vi(model, horizon: int, terminal_values: np.ndarray) -> np.ndarray:
    """Backward induction Q_k = R + E[V_{k-1}(s')], V_0 = terminal values.

    Returns:
        Array of shape (horizon + 1, states, actions); Q_0 repeats the terminal values.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rewards = model.rewards()
    values = np.asarray(terminal_values, dtype=float)
    tables = np.empty((horizon + 1,) + rewards.shape)
    tables[0] = values[:, None]
    for k in range(1, horizon + 1):
        tables[k] = rewards + model.expected_next(values)
        values = tables[k].max(axis=1)
    return tables


@dataclass(frozen=True, eq=False)
class ValueIterationResult:
    values: np.ndarray
    q_values: np.ndarray
    policy: np.ndarray
    residuals: tuple[float, ...]

    @property
    def backups(self) -> int:
        return len(self.residuals)


def infinite_horizon_vi(
    model,
    absorbing: np.ndarray | None = None,
    eps: float = 1e-4,
    max_backups: int = 10_000,
) -> ValueIterationResult:
    """Undiscounted Bellman backups until the max-norm change drops below eps.

    States in the absorbing mask keep value 0 and the zero action (index 0).

    Raises:
        ConvergenceError: if max_backups sweeps do not converge.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rewards = model.rewards()
    absorbing = (
        np.zeros(rewards.shape[0], dtype=bool) if absorbing is None else np.asarray(absorbing)
    )
    values = np.zeros(rewards.shape[0])
    residuals: list[float] = []
    for backup in range(max_backups):
        q = rewards + model.expected_next(values)
        q[absorbing] = 0.0
        updated = q.max(axis=1)
        residual = float(np.max(np.abs(updated - values)))
        residuals.append(residual)
        values = updated
        if residual < eps:
            logger.debug("Value iteration converged after %s backups", backup + 1)
            policy = np.argmax(q, axis=1)
            policy[absorbing] = 0
            return ValueIterationResult(values, q, policy, tuple(residuals))
    logger.warning("Value iteration stopped at %s backups, residual %s", max_backups, residuals[-1])
    raise ConvergenceError(
        f"Value iteration did not converge within {max_backups} backups "
        f"(last residual {residuals[-1]:.3g})",
        residuals,
    )


@dataclass(frozen=True, eq=False)
class TerminationDistribution:
    """Probability of the CF edge terminating at horizon k, plus beyond K."""

    masses: np.ndarray  # (K + 1,)
    overflow: float

    @property
    def horizon(self) -> int:
        return len(self.masses) - 1

    def total(self) -> float:
        return float(self.masses.sum() + self.overflow)


@lru_cache(maxsize=8)
def standard_normal_quantiles(count: int) -> np.ndarray:
    """Fixed stratified N(0, 1) samples; read-only so the cache stays intact."""
    draws = ndtri((np.arange(count) + 0.5) / count)
    draws.setflags(write=False)
    return draws


def bin_termination_times(
    times: np.ndarray, horizon: int, horizon_dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row horizon masses for sampled termination times of shape (rows, samples).

    Times at or below zero go to horizon 0, times up to K * horizon_dt to the nearest
    horizon step, and anything later to the overflow mass.
    """
    times = np.atleast_2d(times)
    inside = times <= horizon * horizon_dt
    bins = np.rint(np.clip(times, 0.0, horizon * horizon_dt) / horizon_dt).astype(np.int64)
    samples = times.shape[1]
    counts = np.zeros((times.shape[0], horizon + 1))
    rows = np.broadcast_to(np.arange(times.shape[0])[:, None], bins.shape)
    np.add.at(counts, (rows[inside], bins[inside]), 1.0)
    overflow = (~inside).sum(axis=1) / samples
    return counts / samples, overflow


def termination_distribution(
    eta_minus_t: float,
    sigma: float,
    horizon: int,
    horizon_dt: float,
    sample_count: int = 100,
) -> TerminationDistribution:
    if sigma < 0 or sample_count < 1:
        raise ValueError("sigma must be >= 0 and sample_count >= 1")
    times = eta_minus_t + sigma * standard_normal_quantiles(sample_count)
    masses, overflow = bin_termination_times(times[None, :], horizon, horizon_dt)
    return TerminationDistribution(masses[0], float(overflow[0]))


def mixture_values(
    qstack: QStack, masses: np.ndarray, overflow: np.ndarray, states: np.ndarray
) -> np.ndarray:
    """D-weighted action values sum_k D_k Q_k(s, a) + D_over Q_over(s, a), batched.

    Returns:
        Array of shape (rows, actions).
    """
    masses = np.atleast_2d(masses)
    overflow = np.atleast_1d(overflow)
    idx, w = interpolation_weights(qstack.grid, states)
    out = overflow[:, None] * np.einsum("ec,eca->ea", w, qstack.out_of_horizon[idx])
    rows, horizons = np.nonzero(masses)
    if rows.size:
        q = qstack.tables[horizons[:, None], idx[rows]]
        contrib = np.einsum("pc,pca->pa", w[rows], q) * masses[rows, horizons][:, None]
        np.add.at(out, rows, contrib)
    return out


def horizon_values(qstack: QStack, horizons: np.ndarray, states: np.ndarray) -> np.ndarray:
    """max_a of the interpolated Q_k at each state, one horizon per row."""
    horizons = np.atleast_1d(horizons)
    idx, w = interpolation_weights(qstack.grid, states)
    q = qstack.tables[horizons[:, None], idx]
    return np.einsum("ec,eca->ea", w, q).max(axis=1)


def combine_partial_control(
    qstack: QStack, distribution: TerminationDistribution, s_c
) -> tuple[int, float]:
    """Best action index (lowest on ties) and its mixture value at s_c."""
    values = mixture_values(
        qstack,
        distribution.masses[None, :],
        np.array([distribution.overflow]),
        np.asarray(s_c, dtype=float)[None, :],
    )[0]
    best = int(np.argmax(values))
    return best, float(values[best])
