import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from inferbench.backends.synthetic import SyntheticBackend
from inferbench.clock import SimulatedClock
from inferbench.core import load_suite
from inferbench.harness import run_suite

REPO = Path(__file__).resolve().parents[1]
CONFIGS = REPO / "configs"


@pytest.fixture(scope="session")
def default_suite():
    return load_suite()


@pytest.fixture(scope="session")
def reference_results(default_suite):
    """Default suite on the default synthetic backend, seed 0."""
    outcomes = run_suite(default_suite.workloads, SyntheticBackend(), SimulatedClock(), seed=0)
    assert all(o.ok for o in outcomes)
    return [o.result for o in outcomes]
