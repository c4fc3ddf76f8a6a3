"""Session fixtures for the DREAMR test suite."""

import sys
from pathlib import Path

import pytest

# Add the project root to Python path
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from policy_store import build_policy_set  # noqa: E402
from tests.support import tiny_config  # noqa: E402


@pytest.fixture(scope="session")
def tiny_policies():
    """CF/UF policies on coarse grids, solved once per test session."""
    return build_policy_set(tiny_config(), 0.5)


@pytest.fixture(scope="session")
def tiny_time_only_policies():
    """Coarse policies for alpha=0, where only elapsed time is penalised."""
    return build_policy_set(tiny_config(), 0.0)
