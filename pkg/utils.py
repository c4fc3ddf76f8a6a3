"""Utility functions for seeding, hashing and summary statistics."""

import hashlib
import json
import logging
import math
from dataclasses import asdict, is_dataclass

import numpy as np

logger = logging.getLogger(__name__)

# Stream tags keep the scenario and agent-noise generators independent.
SCENARIO_STREAM = 0
AGENT_STREAM = 1
RHC_STREAM = 2


def episode_seed_sequence(
    seed: int, episode: int, stream: int, *extra: int
) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(episode), int(stream), *map(int, extra)])


def episode_rngs(
    seed: int, episode: int, world_seed: int = 0
) -> tuple[np.random.Generator, np.random.Generator]:
    """Return (scenario_rng, agent_rng) for one episode of a batch.

    world_seed only enters the scenario stream, so it redraws the world while the
    agent noise stays put.
    """
    scenario = np.random.default_rng(
        episode_seed_sequence(seed, episode, SCENARIO_STREAM, world_seed)
    )
    agent = np.random.default_rng(episode_seed_sequence(seed, episode, AGENT_STREAM))
    return scenario, agent


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_json(value) -> str:
    """Serialize dataclasses/dicts with sorted keys and no whitespace variance."""
    if is_dataclass(value):
        value = asdict(value)
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def config_fingerprint(*parts) -> str:
    """Stable hash over any mix of dataclasses and JSON-able values."""
    return sha256_text("|".join(canonical_json(part) for part in parts))


def standard_error(values) -> float:
    """Sample standard deviation over sqrt(n); 0 for fewer than two values."""
    data = np.asarray(values, dtype=float)
    if data.size < 2:
        return 0.0
    return float(np.std(data, ddof=1) / math.sqrt(data.size))


def format_duration(seconds: float) -> str:
    """Human-readable wall time for progress logs."""
    if seconds < 1.0:
        return f"{seconds * 1000:.1f} ms"
    if seconds < 60.0:
        return f"{seconds:.2f} s"
    minutes, rest = divmod(seconds, 60.0)
    return f"{int(minutes)} min {rest:.0f} s"
