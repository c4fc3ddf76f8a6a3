"""Small configs and hand-built transit states shared across the test modules."""

from dynamics import AgentState, DynamicsLimits
from experiment_config import ExperimentConfig, PolicyConfig, ScenarioConfig
from transit import DreamrState, VehicleRoute, Waypoint

TINY_POLICY = PolicyConfig(
    cf_position_limit=400.0,
    cf_position_knots=5,
    velocity_knots=5,
    uf_position_limit=2000.0,
    uf_position_knots=7,
    action_levels=3,
    horizon_steps=6,
    horizon_dt=5.0,
    eta_sample_count=20,
    vi_eps=1e-2,
    vi_max_backups=20_000,
)

TINY_SCENARIO = ScenarioConfig(
    workspace_side=2000.0,
    epochs=40,
    initial_cars=(2, 4),
    route_waypoints=(3, 6),
    route_duration=(100.0, 300.0),
    min_endpoint_separation=500.0,
)

NOISELESS = DynamicsLimits(sigma_ax=0.0, sigma_ay=0.0)


def tiny_config(**overrides) -> ExperimentConfig:
    values = {
        "scenario": TINY_SCENARIO,
        "policy": TINY_POLICY,
        "planners": ("HHP",),
        "alphas": (0.5,),
        "betas": (0.75,),
        "episodes": 2,
        "jobs": 2,
    }
    values.update(overrides)
    return ExperimentConfig(**values)


def make_route(vehicle_id, points, etas, anchor=None, anchor_time=None) -> VehicleRoute:
    """Route with waypoints at points/etas; the vehicle starts at the anchor or first point."""
    waypoints = tuple(
        Waypoint.create(i, point, eta) for i, (point, eta) in enumerate(zip(points, etas, strict=True))
    )
    position = anchor if anchor is not None else waypoints[0].position
    return VehicleRoute(vehicle_id, tuple(float(c) for c in position), waypoints, anchor, anchor_time)


def make_state(agent: AgentState, routes=(), riding_on=None, time=0, epoch_dt=5.0) -> DreamrState:
    route_map = {route.vehicle_id: route for route in routes}
    return DreamrState(
        agent=agent,
        routes=route_map,
        riding_on=riding_on,
        time=time,
        epoch_dt=epoch_dt,
        next_vehicle_id=max(route_map, default=-1) + 1,
        initial_car_count=len(route_map),
    )
