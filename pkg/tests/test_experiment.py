"""Tests for batch runs, summary tables, report regeneration and the search benchmark."""

import math
import os
from dataclasses import replace

import pandas as pd
import pytest

from config import AGGREGATE_CSV, EPISODES_CSV, HOPS_CSV, SEARCHES_CSV, TRADEOFF_CSV
from experiment import (
    EPISODE_COLUMNS,
    aggregate_episodes,
    benchmark_config,
    cell_tasks,
    hop_table,
    report,
    run_batch,
    save_frames,
    scenario_log_path,
    timing_benchmark,
    tradeoff_table,
)
from tests.support import TINY_SCENARIO, tiny_config


def rhc_config(output_dir, **overrides):
    values = {
        "scenario": replace(TINY_SCENARIO, epochs=8),
        "planners": ("RHC",),
        "output_dir": str(output_dir),
    }
    values.update(overrides)
    return tiny_config(**values)


def episodes_frame() -> pd.DataFrame:
    rows = [
        ("HHP", 0.5, 0.75, 0, True, 100.0, 10.0, 2, 1, 1),
        ("HHP", 0.5, 0.75, 1, False, 120.0, 14.0, 0, 0, 0),
        ("RHC", 0.5, math.nan, 0, True, 90.0, 20.0, 0, 0, 0),
        ("RHC", 0.5, math.nan, 1, True, 110.0, 20.0, 0, 0, 0),
    ]
    frame = pd.DataFrame(
        rows,
        columns=[
            "planner",
            "alpha",
            "beta",
            "episode",
            "success",
            "time_to_goal",
            "energy",
            "hop_attempts",
            "hop_successes",
            "aborts",
        ],
    )
    frame["plans"] = 3
    frame["flight_distance"] = 500.0
    return frame


class TestCells:
    def test_rhc_and_direct_cells_have_no_beta(self):
        config = tiny_config(planners=("HHP", "RHC"), alphas=(0.25, 0.75), betas=(0.5, 1.0))

        tasks = cell_tasks(config)

        assert len(tasks) == 2 * 2 * 2 + 2 * 2
        assert [(t.planner, t.alpha, t.beta, t.episode) for t in tasks[:3]] == [
            ("HHP", 0.25, 0.5, 0),
            ("HHP", 0.25, 0.5, 1),
            ("HHP", 0.25, 1.0, 0),
        ]
        assert all(math.isnan(t.beta) for t in tasks if t.planner == "RHC")

    def test_benchmark_config_fixes_the_fleet(self):
        bench = benchmark_config(tiny_config(), 20, 5)

        assert bench.scenario.initial_cars == (4, 4)
        assert bench.scenario.route_waypoints == (5, 5)
        assert bench.scenario.max_cars_multiplier == 1


class TestSummaries:
    def test_aggregate_per_cell(self):
        aggregate = aggregate_episodes(episodes_frame())

        assert aggregate["planner"].tolist() == ["HHP", "RHC"]
        hhp = aggregate.iloc[0]
        assert hhp["episodes"] == 2
        assert hhp["mean_energy"] == pytest.approx(12.0)
        assert hhp["se_energy"] == pytest.approx(2.0)
        assert hhp["mean_time"] == pytest.approx(110.0)
        assert hhp["success_rate"] == pytest.approx(0.5)
        assert aggregate.iloc[1]["se_energy"] == 0.0

    def test_tradeoff_curves_are_labelled_by_beta(self):
        table = tradeoff_table(aggregate_episodes(episodes_frame()))

        assert table["curve"].tolist() == ["HHP beta=0.75", "RHC"]
        assert table["x"].tolist() == pytest.approx([110.0, 100.0])
        assert table["y"].tolist() == pytest.approx([12.0, 20.0])

    def test_hop_table_covers_hhp_only(self):
        table = hop_table(episodes_frame())

        assert len(table) == 1
        row = table.iloc[0]
        assert row["mean_attempts"] == pytest.approx(1.0)
        assert row["hop_success_rate"] == pytest.approx(0.5)
        assert row["mean_aborts"] == pytest.approx(0.5)

    def test_hop_rate_is_undefined_without_attempts(self):
        frame = episodes_frame()
        frame["hop_attempts"] = 0
        frame["hop_successes"] = 0

        assert math.isnan(hop_table(frame).iloc[0]["hop_success_rate"])

    def test_save_frames_reports_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")

        ok, msg = save_frames({AGGREGATE_CSV: pd.DataFrame()}, str(blocker))

        assert not ok
        assert "Failed to write results" in msg


class TestRunBatch:
    def test_rhc_batch_writes_every_table(self, tmp_path):
        ok, frames, msg = run_batch(rhc_config(tmp_path))

        assert ok, msg
        for name in (EPISODES_CSV, AGGREGATE_CSV, TRADEOFF_CSV, HOPS_CSV, SEARCHES_CSV):
            assert (tmp_path / name).exists()
        episodes = frames[EPISODES_CSV]
        assert list(episodes.columns) == EPISODE_COLUMNS
        assert episodes["episode"].tolist() == [0, 1]
        assert episodes["beta"].isna().all()
        assert frames[HOPS_CSV].empty
        assert len(frames[SEARCHES_CSV]) == episodes["plans"].sum()

    def test_episodes_csv_is_reproducible(self, tmp_path):
        run_batch(rhc_config(tmp_path / "a"))
        run_batch(rhc_config(tmp_path / "b", jobs=1))

        assert (tmp_path / "a" / EPISODES_CSV).read_bytes() == (tmp_path / "b" / EPISODES_CSV).read_bytes()

    def test_report_matches_the_batch_aggregate(self, tmp_path):
        _, frames, _ = run_batch(rhc_config(tmp_path))
        (tmp_path / AGGREGATE_CSV).unlink()

        ok, rebuilt, msg = report(str(tmp_path))

        assert ok, msg
        assert (tmp_path / AGGREGATE_CSV).exists()
        pd.testing.assert_frame_equal(rebuilt[AGGREGATE_CSV], frames[AGGREGATE_CSV], check_dtype=False)

    def test_replayed_scenarios_match_generated_ones(self, tmp_path):
        _, generated, _ = run_batch(rhc_config(tmp_path / "gen"))
        config = rhc_config(tmp_path / "logs")

        ok, replayed, msg = run_batch(config, scenario_logs=True)

        assert ok, msg
        assert os.path.exists(scenario_log_path(config, 1))
        hashes = replayed[EPISODES_CSV]["scenario_hash"]
        assert all(len(h) == 64 for h in hashes)
        assert hashes.nunique() == 2
        pd.testing.assert_frame_equal(
            replayed[EPISODES_CSV].drop(columns="scenario_hash"),
            generated[EPISODES_CSV].drop(columns="scenario_hash"),
        )

    def test_traces_are_written_per_episode(self, tmp_path):
        ok, _, msg = run_batch(rhc_config(tmp_path), traces=True)

        assert ok, msg
        trace = tmp_path / "traces" / "RHC_a0.50_bna_e00000.log"
        assert trace.read_text().startswith("epoch:0 ")

    def test_policy_planners_need_built_policies(self, tmp_path):
        ok, frames, msg = run_batch(tiny_config(output_dir=str(tmp_path)), build=False)

        assert not ok
        assert frames == {}
        assert "build-policies" in msg


class TestReport:
    def test_missing_episodes_file(self, tmp_path):
        ok, frames, msg = report(str(tmp_path))

        assert not ok
        assert frames == {}
        assert "run an experiment first" in msg

    def test_missing_columns(self, tmp_path):
        pd.DataFrame({"planner": ["HHP"]}).to_csv(tmp_path / EPISODES_CSV, index=False)

        ok, _, msg = report(str(tmp_path))

        assert not ok
        assert "lacks column(s)" in msg


def test_timing_benchmark_reports_each_size(tiny_policies):
    config = tiny_config(scenario=replace(TINY_SCENARIO, epochs=8))

    table = timing_benchmark(config, tiny_policies, vertex_counts=(6, 12), runs=1, waypoints_per_car=3)

    assert table["vertices"].tolist() == [6, 12]
    assert table["cars"].tolist() == [2, 4]
    assert (table["setup_ms"] >= 0.0).all()
    assert (table["search_min_ms"] <= table["search_max_ms"]).all()
