"""Batch experiments: offline builds, paired episode batches, aggregates and the search benchmark."""

import logging
import math
import os
import time
from dataclasses import dataclass, replace
from functools import partial

import numpy as np
import pandas as pd

from batch_worker import BatchWorker
from config import (
    AGGREGATE_CSV,
    BENCH_RUNS,
    BENCH_VERTEX_COUNTS,
    BENCH_WAYPOINTS_PER_CAR,
    EPISODES_CSV,
    HOPS_CSV,
    POLICY_DIR_NAME,
    SCENARIO_LOG_DIR,
    SEARCHES_CSV,
    TIMING_CSV,
    TRACE_DIR,
    TRADEOFF_CSV,
)
from executor import EpisodeResult, direct_runner, hhp_runner
from experiment_config import ExperimentConfig
from planner import GlobalPlanner, PlannerSettings, ValueFunctionWeigher
from policy_store import PolicySet, ensure_policies
from rhc import rhc_runner
from scenario import (
    GeneratedStream,
    ReplayStream,
    parse_scenario_log,
    record_scenario,
    scenario_hash,
    write_scenario_log,
)
from utils import episode_rngs, format_duration, standard_error

logger = logging.getLogger(__name__)

POLICY_PLANNERS = ("HHP", "DIRECT")

EPISODE_COLUMNS = [
    "planner",
    "alpha",
    "beta",
    "episode",
    "seed",
    "success",
    "time_to_goal",
    "energy",
    "reward",
    "hop_attempts",
    "hop_successes",
    "aborts",
    "plans",
    "flight_distance",
    "epochs",
    "scenario_hash",
]

SEARCH_COLUMNS = [
    "planner",
    "alpha",
    "beta",
    "episode",
    "search",
    "epoch",
    "vertex_count",
    "expanded",
    "generated",
    "max_frontier",
    "setup_ms",
    "search_ms",
]


@dataclass(frozen=True)
class EpisodeTask:
    planner: str
    alpha: float
    beta: float  # NaN for planners without an abort screen
    episode: int


def policy_root(config: ExperimentConfig) -> str:
    return os.path.join(config.output_dir, POLICY_DIR_NAME)


def scenario_log_path(config: ExperimentConfig, episode: int) -> str:
    return os.path.join(config.output_dir, SCENARIO_LOG_DIR, f"episode_{episode:05d}.log")


def offline_build(
    config: ExperimentConfig, force: bool = False
) -> tuple[bool, dict[float, PolicySet], str]:
    """Solve and write the CF/UF policies for every configured alpha.

    Returns:
        tuple: (success: bool, policy sets by alpha, message: str)
    """
    return ensure_policies(config, policy_root(config), config.alphas, force=force)


def cell_tasks(config: ExperimentConfig) -> list[EpisodeTask]:
    """Every (planner, alpha, beta, episode) the batch runs, in output order."""
    tasks = []
    for planner in config.planners:
        betas = config.betas if planner == "HHP" else (math.nan,)
        for alpha in config.alphas:
            for beta in betas:
                tasks.extend(
                    EpisodeTask(planner, alpha, beta, episode)
                    for episode in range(config.episodes)
                )
    return tasks


def episode_stream(config: ExperimentConfig, episode: int, log_path: str | None = None):
    """Scenario stream and agent RNG for one episode; planners of a cell share both."""
    if log_path is None:
        return GeneratedStream.for_episode(config.scenario, config.seed, episode)
    with open(log_path) as f:
        scenario, _, epochs = parse_scenario_log(f.read())
    _, agent_rng = episode_rngs(config.seed, episode)
    return ReplayStream(scenario, epochs), agent_rng


def run_task(
    config: ExperimentConfig,
    task: EpisodeTask,
    policies: dict[float, PolicySet],
    log_path: str | None = None,
    record_trace: bool = False,
) -> EpisodeResult:
    stream, agent_rng = episode_stream(config, task.episode, log_path)
    if task.planner == "HHP":
        runner = hhp_runner(config, policies[task.alpha], task.alpha, task.beta, record_trace)
    elif task.planner == "DIRECT":
        runner = direct_runner(config, policies[task.alpha], task.alpha, record_trace)
    else:
        runner = rhc_runner(config, task.alpha, task.episode, record_trace)
    return runner.run(stream, agent_rng)


def episode_row(task: EpisodeTask, result: EpisodeResult, seed: int, log_hash: str) -> dict:
    m = result.metrics
    return {
        "planner": task.planner,
        "alpha": task.alpha,
        "beta": task.beta,
        "episode": task.episode,
        "seed": seed,
        "success": m.success,
        "time_to_goal": m.time_to_goal,
        "energy": m.energy,
        "reward": m.reward,
        "hop_attempts": m.hop_attempts,
        "hop_successes": m.hop_successes,
        "aborts": m.aborts,
        "plans": m.plans,
        "flight_distance": m.flight_distance,
        "epochs": m.epochs,
        "scenario_hash": log_hash,
    }


def search_rows(task: EpisodeTask, result: EpisodeResult) -> list[dict]:
    return [
        {
            "planner": task.planner,
            "alpha": task.alpha,
            "beta": task.beta,
            "episode": task.episode,
            "search": i,
            "epoch": epoch,
            "vertex_count": stats.vertex_count,
            "expanded": stats.expanded,
            "generated": stats.generated,
            "max_frontier": stats.max_frontier,
            "setup_ms": stats.setup_seconds * 1000.0,
            "search_ms": stats.search_seconds * 1000.0,
        }
        for i, (epoch, stats) in enumerate(result.searches)
    ]


CELL_KEYS = ["planner", "alpha", "beta"]


def aggregate_episodes(episodes: pd.DataFrame) -> pd.DataFrame:
    """One row per (planner, alpha, beta) cell, in first-appearance order."""
    grouped = episodes.groupby(CELL_KEYS, sort=False, dropna=False)
    return grouped.agg(
        episodes=("episode", "size"),
        mean_energy=("energy", "mean"),
        se_energy=("energy", standard_error),
        mean_time=("time_to_goal", "mean"),
        se_time=("time_to_goal", standard_error),
        success_rate=("success", "mean"),
        mean_hop_attempts=("hop_attempts", "mean"),
        mean_hop_successes=("hop_successes", "mean"),
        mean_aborts=("aborts", "mean"),
        mean_plans=("plans", "mean"),
        mean_flight_distance=("flight_distance", "mean"),
    ).reset_index()


def curve_label(planner: str, beta: float) -> str:
    if isinstance(beta, float) and math.isnan(beta):
        return planner
    return f"{planner} beta={beta:g}"


def tradeoff_table(aggregate: pd.DataFrame) -> pd.DataFrame:
    """Energy against time per cell: one curve per planner (and beta), one point per alpha."""
    table = pd.DataFrame(
        {
            "curve": [curve_label(p, b) for p, b in zip(aggregate["planner"], aggregate["beta"], strict=True)],
            "planner": aggregate["planner"],
            "alpha": aggregate["alpha"],
            "beta": aggregate["beta"],
            "x": aggregate["mean_time"],
            "x_stderr": aggregate["se_time"],
            "y": aggregate["mean_energy"],
            "y_stderr": aggregate["se_energy"],
        }
    )
    return table


def hop_table(episodes: pd.DataFrame) -> pd.DataFrame:
    """Hop attempts and successes per (alpha, beta) for the HHP cells."""
    hhp = episodes[episodes["planner"] == "HHP"]
    rows = []
    for (alpha, beta), cell in hhp.groupby(["alpha", "beta"], sort=False):
        attempts = cell["hop_attempts"]
        successes = cell["hop_successes"]
        total = int(attempts.sum())
        rows.append(
            {
                "alpha": alpha,
                "beta": beta,
                "episodes": len(cell),
                "mean_attempts": attempts.mean(),
                "se_attempts": standard_error(attempts),
                "mean_successes": successes.mean(),
                "se_successes": standard_error(successes),
                "hop_success_rate": successes.sum() / total if total else math.nan,
                "mean_aborts": cell["aborts"].mean(),
            }
        )
    return pd.DataFrame(
        rows,
        columns=[
            "alpha",
            "beta",
            "episodes",
            "mean_attempts",
            "se_attempts",
            "mean_successes",
            "se_successes",
            "hop_success_rate",
            "mean_aborts",
        ],
    )


def summary_frames(episodes: pd.DataFrame) -> dict[str, pd.DataFrame]:
    aggregate = aggregate_episodes(episodes)
    return {
        EPISODES_CSV: episodes,
        AGGREGATE_CSV: aggregate,
        TRADEOFF_CSV: tradeoff_table(aggregate),
        HOPS_CSV: hop_table(episodes),
    }


def save_frames(frames: dict[str, pd.DataFrame], directory: str) -> tuple[bool, str]:
    """
    Write each frame as <directory>/<name>.

    Returns:
        tuple: (success: bool, message: str)
    """
    try:
        os.makedirs(directory, exist_ok=True)
        for name, frame in frames.items():
            frame.to_csv(os.path.join(directory, name), index=False, lineterminator="\n")
        return True, f"Wrote {', '.join(frames)} to {directory}"
    except PermissionError:
        return False, f"Permission denied: Cannot write to {directory}."
    except OSError as e:
        return False, f"Failed to write results: {str(e)}"


def _record_scenarios(config: ExperimentConfig) -> tuple[bool, dict[int, str], str]:
    hashes: dict[int, str] = {}
    for episode in range(config.episodes):
        path = scenario_log_path(config, episode)
        text = record_scenario(config.scenario, config.seed, episode)
        ok, message = write_scenario_log(path, text)
        if not ok:
            return False, hashes, message
        hashes[episode] = scenario_hash(text)
    return True, hashes, f"Recorded {len(hashes)} scenario logs"


def _write_traces(config: ExperimentConfig, tasks, results) -> tuple[bool, str]:
    directory = os.path.join(config.output_dir, TRACE_DIR)
    try:
        os.makedirs(directory, exist_ok=True)
        for task, result in zip(tasks, results, strict=True):
            beta = "na" if math.isnan(task.beta) else f"{task.beta:.2f}"
            name = f"{task.planner}_a{task.alpha:.2f}_b{beta}_e{task.episode:05d}.log"
            with open(os.path.join(directory, name), "w", newline="\n") as f:
                f.write("\n".join(result.trace_lines()) + "\n")
        return True, f"Wrote {len(results)} traces to {directory}"
    except OSError as e:
        return False, f"Failed to write traces: {str(e)}"


def run_batch(
    config: ExperimentConfig,
    build: bool = True,
    scenario_logs: bool = False,
    traces: bool = False,
    worker: BatchWorker | None = None,
) -> tuple[bool, dict[str, pd.DataFrame], str]:
    """Run every cell's episodes, then write the per-episode and summary CSVs.

    Returns:
        tuple: (success: bool, frames by file name, message: str)
    """
    started = time.perf_counter()
    policies: dict[float, PolicySet] = {}
    if any(p in POLICY_PLANNERS for p in config.planners):
        ok, policies, message = ensure_policies(
            config, policy_root(config), config.alphas, build=build
        )
        if not ok:
            return False, {}, message

    hashes: dict[int, str] = {}
    if scenario_logs:
        ok, hashes, message = _record_scenarios(config)
        if not ok:
            return False, {}, message
        logger.info(message)

    tasks = cell_tasks(config)
    jobs = [
        partial(
            run_task,
            config,
            task,
            policies,
            scenario_log_path(config, task.episode) if scenario_logs else None,
            traces,
        )
        for task in tasks
    ]

    def progress(done: int, total: int):
        if done == total or done % max(1, total // 10) == 0:
            logger.info("Episodes finished: %s/%s", done, total)

    worker = worker or BatchWorker(config.jobs)
    results = worker.run_ordered(jobs, on_progress=progress)

    episodes = pd.DataFrame(
        [
            episode_row(task, result, config.seed, hashes.get(task.episode, ""))
            for task, result in zip(tasks, results, strict=True)
        ],
        columns=EPISODE_COLUMNS,
    )
    frames = summary_frames(episodes)
    frames[SEARCHES_CSV] = pd.DataFrame(
        [row for task, result in zip(tasks, results, strict=True) for row in search_rows(task, result)],
        columns=SEARCH_COLUMNS,
    )
    ok, message = save_frames(frames, config.output_dir)
    if not ok:
        return False, frames, message
    if traces:
        ok, message = _write_traces(config, tasks, results)
        if not ok:
            return False, frames, message
    return (
        True,
        frames,
        f"Ran {len(tasks)} episodes in {format_duration(time.perf_counter() - started)}; "
        f"results in {config.output_dir}",
    )


def report(output_dir: str) -> tuple[bool, dict[str, pd.DataFrame], str]:
    """Recompute the summary CSVs from an existing episodes.csv.

    Returns:
        tuple: (success: bool, frames by file name, message: str)
    """
    path = os.path.join(output_dir, EPISODES_CSV)
    try:
        episodes = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values=[""])
    except FileNotFoundError:
        return False, {}, f"No {EPISODES_CSV} in {output_dir}; run an experiment first"
    except (OSError, ValueError) as e:
        return False, {}, f"Cannot read {path}: {e}"
    missing = [c for c in EPISODE_COLUMNS if c not in episodes.columns and c != "scenario_hash"]
    if missing:
        return False, {}, f"{path} lacks column(s): {', '.join(missing)}"
    frames = summary_frames(episodes)
    del frames[EPISODES_CSV]
    ok, message = save_frames(frames, output_dir)
    return ok, frames, message


def benchmark_config(config: ExperimentConfig, vertices: int, waypoints_per_car: int) -> ExperimentConfig:
    """Fixed car count with a fixed waypoint count per car and no spawning."""
    cars = max(1, vertices // waypoints_per_car)
    scenario = replace(
        config.scenario,
        initial_cars=(cars, cars),
        route_waypoints=(waypoints_per_car, waypoints_per_car),
        max_cars_multiplier=1,
    )
    return replace(config, scenario=scenario)


def timing_benchmark(
    config: ExperimentConfig,
    policies: PolicySet,
    vertex_counts=BENCH_VERTEX_COUNTS,
    runs: int = BENCH_RUNS,
    beta: float | None = None,
    waypoints_per_car: int = BENCH_WAYPOINTS_PER_CAR,
) -> pd.DataFrame:
    """Setup and search wall time against graph size.

    For each size, the agent holds still at its start while the world evolves
    over the first quarter of an episode, replanning every replan period.
    """
    beta = config.betas[0] if beta is None else beta
    alpha = policies.alpha
    rows = []
    for vertices in vertex_counts:
        bench = benchmark_config(config, vertices, waypoints_per_car)
        planner = GlobalPlanner(
            ValueFunctionWeigher(policies, beta), PlannerSettings.from_config(bench, alpha)
        )
        setup, first, low, high, counts, expanded = [], [], [], [], [], []
        for run in range(runs):
            stream, _ = GeneratedStream.for_episode(bench.scenario, bench.seed, run)
            state = stream.scenario.initial_state
            goal = stream.scenario.goal
            times = []
            for epoch in range(max(1, bench.scenario.epochs // 4)):
                if epoch % bench.replan_period == 0:
                    stats = planner.plan(state, goal).stats
                    if not times:
                        setup.append(stats.setup_seconds)
                        counts.append(stats.vertex_count)
                        expanded.append(stats.expanded)
                    times.append(stats.search_seconds)
                state = stream.advance(state)
            first.append(times[0])
            low.append(min(times))
            high.append(max(times))
        rows.append(
            {
                "vertices": vertices,
                "cars": bench.scenario.initial_cars[0],
                "runs": runs,
                "vertex_count": float(np.mean(counts)),
                "setup_ms": float(np.mean(setup)) * 1000.0,
                "first_search_ms": float(np.mean(first)) * 1000.0,
                "search_min_ms": float(np.mean(low)) * 1000.0,
                "search_max_ms": float(np.mean(high)) * 1000.0,
                "first_expanded": float(np.mean(expanded)),
            }
        )
        logger.info("Benchmarked |V|=%s over %s run(s)", vertices, runs)
    return pd.DataFrame(rows)


def save_timing(table: pd.DataFrame, output_dir: str) -> tuple[bool, str]:
    return save_frames({TIMING_CSV: table}, output_dir)
