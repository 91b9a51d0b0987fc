"""
Shared fixtures for the HiveSim test suite.
"""

import random
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from hivesim.dsl import TaskDef, TaskGraph  # noqa: E402
from hivesim.sim.kernel import Kernel  # noqa: E402
from hivesim.workloads import ScenarioConfig  # noqa: E402

SCENARIO_DIR = ROOT / 'scenarios'


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long simulation runs (deselect with -m "not slow")')


@pytest.fixture
def scenario_dir() -> Path:
    return SCENARIO_DIR


@pytest.fixture
def kernel() -> Kernel:
    return Kernel(42, run_id='test')


@pytest.fixture
def scenario_a() -> ScenarioConfig:
    """ScenarioA on a small swarm with a fixed horizon."""
    return ScenarioConfig(name='test-a', workload='ScenarioA', devices=4, duration_s=20.0)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240521)


def random_dag(rnd: random.Random, size: int, edge_p: float = 0.3) -> TaskGraph:
    """
    Random valid task graph: edges only go from lower to higher index.

    Roots consume nothing (sensor sources); everything else consumes kind 'd'.
    """
    names = [f"t{i}" for i in range(size)]
    parents = {n: [] for n in names}
    children = {n: [] for n in names}
    for i in range(size):
        for j in range(i + 1, size):
            if rnd.random() < edge_p:
                children[names[i]].append(names[j])
                parents[names[j]].append(names[i])
    tasks = [TaskDef(name=n, data_in=None if not parents[n] else 'd', data_out='d',
                     code_ref=f"code/{n}", parents=parents[n], children=children[n])
             for n in names]
    return TaskGraph(tasks=tasks)
