"""Configuration and constants for the DREAMR planner and simulator."""

import math

# Agent dynamics
V_MAX = 20.0  # m/s, per axis
A_MAX = 5.0  # m/s^2, per axis
NOISE_SIGMA = 0.1 * A_MAX  # m/s^2, per axis
TIMESTEP = 5.0  # s, one simulation epoch

# Reward (energy + time)
LAMBDA_D = 1.0 / 100.0  # cost per metre flown
LAMBDA_H = 0.5  # cost per hover step
HOVER_SPEED_EPS = 0.5  # m/s

# Board / alight preconditions
BOARD_DIST = 20.0  # m
BOARD_SPEED = 2.0  # m/s

# Scenario generation
WORKSPACE_SIDE = 10_000.0  # m
EPISODE_EPOCHS = 360
INITIAL_CARS = (50, 500)
MAX_CARS_MULTIPLIER = 2
ROUTE_WAYPOINTS = (5, 15)
ROUTE_DURATION = (100.0, 900.0)  # s
MIN_ENDPOINT_SEPARATION = 2_000.0  # m
MAX_CAR_SPEED = 50.0  # m/s
PERTURB_PROBABILITY = 0.75
PERTURB_BOUND = 5.0  # s
PERTURB_REDRAWS = 3
ROUTE_GENERATION_RETRIES = 1_000
GOAL_CORNER_OFFSET = (0.05, 0.15)  # fraction of the workspace side

# Offline policies
CF_POSITION_LIMIT = 2_000.0  # m
CF_POSITION_KNOTS = 17
VELOCITY_KNOTS = 9
UF_POSITION_LIMIT = math.ceil(WORKSPACE_SIDE * math.sqrt(2.0) / 100.0) * 100.0
UF_POSITION_KNOTS = 25
ACTION_LEVELS = 3  # per axis; 5 gives the 5x5 action set
HORIZON_STEPS = 60  # K
HORIZON_DT = TIMESTEP
ETA_SAMPLE_COUNT = 100
ETA_SIGMA_FLOOR = 0.5  # s
STATIONARY_VI_EPS = 1e-4
STATIONARY_VI_MAX_BACKUPS = 10_000
PHI_MARGIN = 1.0
EPS_CF = TIMESTEP / 2.0
POLICY_FORMAT_VERSION = 1

# Global planner
BETA_RANGE = (0.05, 1.0)
DEFAULT_BETA = 0.75
RIDE_ADJACENT_ONLY = False

# Executor
REPLAN_PERIOD = 3  # epochs (Delta T)

# Receding horizon control baseline
RHC_UF_HORIZON = 12
RHC_POPULATION = 64
RHC_ELITE_FRACTION = 0.1
RHC_ITERATIONS = 5
RHC_SEED = 0

# Experiments
PLANNERS = ("HHP", "RHC", "DIRECT")
DEFAULT_ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
DEFAULT_BETAS = (DEFAULT_BETA,)
DESK_INITIAL_CARS = (50, 200)
EPISODES_PER_CELL = 100
DEFAULT_JOBS = 4
DEFAULT_OUTPUT_DIR = "results"
DEFAULT_SEED = 0
BENCH_VERTEX_COUNTS = (1000, 2000, 5000)
BENCH_WAYPOINTS_PER_CAR = 10
BENCH_RUNS = 5

# Output file names
POLICY_DIR_NAME = "policies"
CF_POLICY_FILE = "cf.npz"
UF_POLICY_FILE = "uf.npz"
EPISODES_CSV = "episodes.csv"
AGGREGATE_CSV = "aggregate.csv"
TRADEOFF_CSV = "tradeoff.csv"
HOPS_CSV = "hops.csv"
SEARCHES_CSV = "searches.csv"
TIMING_CSV = "timing.csv"
SCENARIO_LOG_DIR = "scenarios"
TRACE_DIR = "traces"
