"""Experiment configuration dataclasses and the JSON config file loader."""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace

from config import (
    ACTION_LEVELS,
    BETA_RANGE,
    CF_POSITION_KNOTS,
    CF_POSITION_LIMIT,
    DEFAULT_ALPHAS,
    DEFAULT_BETAS,
    DEFAULT_JOBS,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_SEED,
    DESK_INITIAL_CARS,
    EPISODE_EPOCHS,
    EPISODES_PER_CELL,
    EPS_CF,
    ETA_SAMPLE_COUNT,
    ETA_SIGMA_FLOOR,
    GOAL_CORNER_OFFSET,
    HORIZON_DT,
    HORIZON_STEPS,
    HOVER_SPEED_EPS,
    LAMBDA_D,
    LAMBDA_H,
    MAX_CAR_SPEED,
    MAX_CARS_MULTIPLIER,
    MIN_ENDPOINT_SEPARATION,
    PERTURB_BOUND,
    PERTURB_PROBABILITY,
    PHI_MARGIN,
    PLANNERS,
    REPLAN_PERIOD,
    RHC_ELITE_FRACTION,
    RHC_ITERATIONS,
    RHC_POPULATION,
    RHC_SEED,
    RHC_UF_HORIZON,
    RIDE_ADJACENT_ONLY,
    ROUTE_DURATION,
    ROUTE_WAYPOINTS,
    STATIONARY_VI_EPS,
    STATIONARY_VI_MAX_BACKUPS,
    TIMESTEP,
    UF_POSITION_KNOTS,
    UF_POSITION_LIMIT,
    VELOCITY_KNOTS,
    WORKSPACE_SIDE,
)
from dynamics import BoardThresholds, DynamicsLimits, RewardParams

logger = logging.getLogger(__name__)


def _check_range(name: str, bounds) -> None:
    low, high = bounds
    if low > high:
        raise ValueError(f"{name} range is empty: {bounds}")


@dataclass(frozen=True)
class ScenarioConfig:
    """Synthetic transit scenario parameters."""

    workspace_side: float = WORKSPACE_SIDE
    epochs: int = EPISODE_EPOCHS
    epoch_dt: float = TIMESTEP
    initial_cars: tuple[int, int] = DESK_INITIAL_CARS
    max_cars_multiplier: int = MAX_CARS_MULTIPLIER
    route_waypoints: tuple[int, int] = ROUTE_WAYPOINTS
    route_duration: tuple[float, float] = ROUTE_DURATION
    min_endpoint_separation: float = MIN_ENDPOINT_SEPARATION
    max_car_speed: float = MAX_CAR_SPEED
    perturb_probability: float = PERTURB_PROBABILITY
    perturb_bound: float = PERTURB_BOUND
    goal_corner_offset: tuple[float, float] = GOAL_CORNER_OFFSET
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        _check_range("initial_cars", self.initial_cars)
        _check_range("route_waypoints", self.route_waypoints)
        _check_range("route_duration", self.route_duration)
        _check_range("goal_corner_offset", self.goal_corner_offset)
        if self.route_waypoints[0] < 2:
            raise ValueError("routes need at least two waypoints")
        if self.route_duration[0] <= 0:
            raise ValueError("route durations must be positive")
        if self.workspace_side <= 0 or self.epochs < 1 or self.epoch_dt <= 0:
            raise ValueError("workspace_side, epochs and epoch_dt must be positive")
        if not 0.0 <= self.perturb_probability <= 1.0:
            raise ValueError("perturb_probability must lie in [0, 1]")
        if self.perturb_bound < 0 or self.max_cars_multiplier < 1:
            raise ValueError("perturb_bound >= 0 and max_cars_multiplier >= 1 required")


@dataclass(frozen=True)
class PolicyConfig:
    """Grid resolutions and solver settings for the offline macro-policies."""

    cf_position_limit: float = CF_POSITION_LIMIT
    cf_position_knots: int = CF_POSITION_KNOTS
    velocity_knots: int = VELOCITY_KNOTS
    uf_position_limit: float = UF_POSITION_LIMIT
    uf_position_knots: int = UF_POSITION_KNOTS
    action_levels: int = ACTION_LEVELS
    horizon_steps: int = HORIZON_STEPS
    horizon_dt: float = HORIZON_DT
    eta_sample_count: int = ETA_SAMPLE_COUNT
    eta_sigma_floor: float = ETA_SIGMA_FLOOR
    vi_eps: float = STATIONARY_VI_EPS
    vi_max_backups: int = STATIONARY_VI_MAX_BACKUPS
    phi_margin: float = PHI_MARGIN
    eps_cf: float = EPS_CF

    def __post_init__(self):
        for name in ("cf_position_knots", "velocity_knots", "uf_position_knots"):
            knots = getattr(self, name)
            if knots < 3 or knots % 2 == 0:
                raise ValueError(f"{name} must be odd and >= 3, got: {knots}")
        if self.action_levels < 3 or self.action_levels % 2 == 0:
            raise ValueError("action_levels must be odd and >= 3")
        if self.horizon_steps < 1 or self.horizon_dt <= 0:
            raise ValueError("horizon_steps >= 1 and horizon_dt > 0 required")
        if self.eta_sample_count < 1 or self.vi_eps <= 0:
            raise ValueError("eta_sample_count >= 1 and vi_eps > 0 required")


@dataclass(frozen=True)
class RhcParams:
    """Cross-entropy optimiser settings for the receding horizon baseline."""

    uf_horizon: int = RHC_UF_HORIZON
    population: int = RHC_POPULATION
    elite_fraction: float = RHC_ELITE_FRACTION
    iterations: int = RHC_ITERATIONS
    seed: int = RHC_SEED
    levels: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.uf_horizon < 1:
            raise ValueError("uf_horizon must be >= 1")
        if self.population < 10:
            raise ValueError("population (sample budget) must be >= 10")
        if not 0.0 < self.elite_fraction <= 1.0 or self.iterations < 1:
            raise ValueError("elite_fraction in (0, 1] and iterations >= 1 required")

    @property
    def elite_count(self) -> int:
        return max(1, int(round(self.elite_fraction * self.population)))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a batch run needs: world, agent, policies and the experimental grid."""

    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    rhc: RhcParams = field(default_factory=RhcParams)
    limits: DynamicsLimits = field(default_factory=DynamicsLimits)
    thresholds: BoardThresholds = field(default_factory=BoardThresholds)
    lambda_d: float = LAMBDA_D
    lambda_h: float = LAMBDA_H
    hover_speed_eps: float = HOVER_SPEED_EPS
    planners: tuple[str, ...] = PLANNERS
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    betas: tuple[float, ...] = DEFAULT_BETAS
    episodes: int = EPISODES_PER_CELL
    replan_period: int = REPLAN_PERIOD
    ride_adjacent_only: bool = RIDE_ADJACENT_ONLY
    jobs: int = DEFAULT_JOBS
    output_dir: str = DEFAULT_OUTPUT_DIR
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if any(not 0.0 <= a <= 1.0 for a in self.alphas):
            raise ValueError(f"alpha values must lie in [0, 1], got: {self.alphas}")
        if any(not BETA_RANGE[0] <= b <= BETA_RANGE[1] for b in self.betas):
            raise ValueError(f"beta values must lie in {BETA_RANGE}, got: {self.betas}")
        unknown = [p for p in self.planners if p not in PLANNERS]
        if unknown:
            raise ValueError(f"Unknown planner(s): {', '.join(unknown)}")
        if self.episodes < 1 or self.jobs < 1 or self.replan_period < 1:
            raise ValueError("episodes, jobs and replan_period must be >= 1")
        if self.scenario.max_car_speed < self.limits.v_max:
            raise ValueError(
                "max_car_speed must be at least the agent v_max for an admissible heuristic"
            )

    def reward_params(self, alpha: float) -> RewardParams:
        return RewardParams(
            alpha=alpha,
            lambda_d=self.lambda_d,
            lambda_h=self.lambda_h,
            hover_speed_eps=self.hover_speed_eps,
            timestep=self.scenario.epoch_dt,
        )


_SECTIONS = {
    "scenario": ScenarioConfig,
    "policy": PolicyConfig,
    "rhc": RhcParams,
    "limits": DynamicsLimits,
    "thresholds": BoardThresholds,
}


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, data: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"Unknown key(s) in {where}: {', '.join(unknown)}")
    return {key: _tupled(value) for key, value in data.items()}


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build a config from nested dicts; missing keys take the defaults."""
    values = _build(ExperimentConfig, data, "config")
    for name, cls in _SECTIONS.items():
        if name in values:
            section = values[name]
            if not isinstance(section, dict):
                raise ValueError(f"Section '{name}' must be an object")
            values[name] = cls(**_build(cls, section, name))
    return ExperimentConfig(**values)


def config_to_dict(config: ExperimentConfig) -> dict:
    return asdict(config)


def with_overrides(config: ExperimentConfig, **overrides) -> ExperimentConfig:
    """Apply CLI overrides, skipping any left as None."""
    changes = {key: value for key, value in overrides.items() if value is not None}
    return replace(config, **changes) if changes else config


def load_experiment_config(path: str) -> tuple[bool, ExperimentConfig | None, str]:
    """
    Load an experiment config from a JSON file.

    Args:
        path: Config file path

    Returns:
        tuple: (success: bool, config or None, message: str)
    """
    try:
        with open(path) as f:
            data = json.load(f)
        if not isinstance(data, dict):
            return False, None, f"Config file {path} must hold a JSON object"
        config = config_from_dict(data)
        return True, config, f"Loaded config from {path}"
    except FileNotFoundError:
        return False, None, f"Config file not found: {path}"
    except json.JSONDecodeError as e:
        return False, None, f"Config file {path} is not valid JSON: {e}"
    except (TypeError, ValueError) as e:
        logger.debug("Rejected config file %s", path, exc_info=True)
        return False, None, f"Invalid config: {e}"


def save_experiment_config(config: ExperimentConfig, path: str) -> tuple[bool, str]:
    """
    Save an experiment config as JSON.

    Returns:
        tuple: (success: bool, message: str)
    """
    try:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w") as f:
            json.dump(config_to_dict(config), f, indent=2, sort_keys=True)
            f.write("\n")
        return True, f"Config saved to {path}"
    except PermissionError:
        return False, f"Permission denied: Cannot write to {path}."
    except OSError as e:
        return False, f"Failed to save config: {str(e)}"
