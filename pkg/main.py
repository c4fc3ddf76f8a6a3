#!/usr/bin/env python3
"""
DREAMR planner - hierarchical hybrid planning for an agent that flies and rides
transit vehicles, with the experiment harness around it.

Module layout:
- config.py: defaults and constants
- experiment_config.py: config dataclasses and the JSON config file
- dynamics.py, transit.py, scenario.py: agent, vehicles and the simulator
- mdp_kernel.py, components/: offline solvers and the macro-action policies
- policy_store.py: policy files
- planner.py, executor.py, rhc.py: global search, episode loop, RHC baseline
- experiment.py, batch_worker.py: batches, aggregates and the benchmark
"""

import argparse
import logging
import os
import sys

from config import (
    BENCH_RUNS,
    BENCH_VERTEX_COUNTS,
    BENCH_WAYPOINTS_PER_CAR,
    PLANNERS,
)
from experiment import (
    offline_build,
    policy_root,
    report,
    run_batch,
    save_timing,
    timing_benchmark,
)
from experiment_config import (
    ExperimentConfig,
    load_experiment_config,
    save_experiment_config,
    with_overrides,
)
from policy_store import ensure_policies

logger = logging.getLogger(__name__)

CONFIG_SNAPSHOT = "config.json"


def configure_runtime_logging(verbosity: int = 0):
    """Warnings by default, -v for progress, -vv for diagnostics."""
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dreamr", description="DREAMR hierarchical hybrid planner experiments"
    )
    parser.add_argument("--config", help="JSON experiment config (defaults otherwise)")
    parser.add_argument("--seed", type=int, help="Global seed")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="More logging (repeatable)"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    build = commands.add_parser("build-policies", help="Solve and write the offline policies")
    build.add_argument("--alpha", type=float, nargs="+", help="Alpha values to build")
    build.add_argument("--force", action="store_true", help="Rebuild even if up to date")

    run = commands.add_parser("run", help="Run a batch of paired episodes")
    run.add_argument("--planner", nargs="+", choices=PLANNERS, help="Planners to compare")
    run.add_argument("--alpha", type=float, nargs="+", help="Alpha values")
    run.add_argument("--beta", type=float, nargs="+", help="Beta values (HHP only)")
    run.add_argument("--episodes", type=int, help="Episodes per cell")
    run.add_argument("--jobs", type=int, help="Parallel episodes")
    run.add_argument(
        "--no-build", action="store_true", help="Fail instead of building missing policies"
    )
    run.add_argument(
        "--scenario-logs",
        action="store_true",
        help="Record each episode's scenario log and replay it for every planner",
    )
    run.add_argument("--traces", action="store_true", help="Write per-episode traces")

    bench = commands.add_parser("bench", help="Time graph setup and search against |V|")
    bench.add_argument("--vertices", type=int, nargs="+", default=list(BENCH_VERTEX_COUNTS))
    bench.add_argument("--runs", type=int, default=BENCH_RUNS)
    bench.add_argument("--waypoints-per-car", type=int, default=BENCH_WAYPOINTS_PER_CAR)
    bench.add_argument("--alpha", type=float, help="Policy alpha (first configured by default)")
    bench.add_argument("--beta", type=float, help="Abort screen beta")
    bench.add_argument("--no-build", action="store_true")

    commands.add_parser("report", help="Recompute summaries from episodes.csv")
    return parser


def resolve_config(args: argparse.Namespace) -> tuple[bool, ExperimentConfig | None, str]:
    """
    Load the config file (if any) and apply command-line overrides.

    Returns:
        tuple: (success: bool, config or None, message: str)
    """
    if args.config:
        ok, config, message = load_experiment_config(args.config)
        if not ok:
            return False, None, message
    else:
        config, message = ExperimentConfig(), "Using default config"

    overrides = {"seed": args.seed, "output_dir": args.out}
    if args.command in ("build-policies", "run") and args.alpha:
        overrides["alphas"] = tuple(args.alpha)
    if args.command == "run":
        overrides.update(
            planners=tuple(args.planner) if args.planner else None,
            betas=tuple(args.beta) if args.beta else None,
            episodes=args.episodes,
            jobs=args.jobs,
        )
    try:
        return True, with_overrides(config, **overrides), message
    except ValueError as e:
        return False, None, f"Invalid option: {e}"


def _build(config: ExperimentConfig, args) -> int:
    ok, policies, message = offline_build(config, force=args.force)
    print(message)
    return 0 if ok else 1


def _run(config: ExperimentConfig, args) -> int:
    ok, message = save_experiment_config(config, os.path.join(config.output_dir, CONFIG_SNAPSHOT))
    if not ok:
        print(message, file=sys.stderr)
        return 1
    ok, frames, message = run_batch(
        config,
        build=not args.no_build,
        scenario_logs=args.scenario_logs,
        traces=args.traces,
    )
    if not ok:
        print(message, file=sys.stderr)
        return 1
    print(frames["aggregate.csv"].to_string(index=False))
    print(message)
    return 0


def _bench(config: ExperimentConfig, args) -> int:
    alpha = config.alphas[0] if args.alpha is None else args.alpha
    ok, policies, message = ensure_policies(
        config, policy_root(config), [alpha], build=not args.no_build
    )
    if not ok:
        print(message, file=sys.stderr)
        return 1
    table = timing_benchmark(
        config,
        policies[alpha],
        args.vertices,
        args.runs,
        args.beta,
        args.waypoints_per_car,
    )
    ok, message = save_timing(table, config.output_dir)
    print(table.to_string(index=False))
    print(message)
    return 0 if ok else 1


def _report(config: ExperimentConfig, args) -> int:
    ok, frames, message = report(config.output_dir)
    if not ok:
        print(message, file=sys.stderr)
        return 1
    print(frames["aggregate.csv"].to_string(index=False))
    print(message)
    return 0


COMMANDS = {
    "build-policies": _build,
    "run": _run,
    "bench": _bench,
    "report": _report,
}


def cli(args: list[str] | None = None) -> int:
    """Parse arguments, configure logging and dispatch the subcommand."""
    args = build_parser().parse_args(sys.argv[1:] if args is None else args)
    configure_runtime_logging(args.verbose)
    ok, config, message = resolve_config(args)
    if not ok:
        print(message, file=sys.stderr)
        return 2
    logger.info(message)
    return COMMANDS[args.command](config, args)


if __name__ == "__main__":
    raise SystemExit(cli())
