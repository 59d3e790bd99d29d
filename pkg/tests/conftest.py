import pytest

from cvgl.evaluation import BenchmarkConfig, prepare_benchmark
from cvgl.synthworld import WorldSpec


@pytest.fixture(scope="session")
def small_bench():
    """Seed-7 world with a short pose sweep and six classes."""
    return prepare_benchmark(BenchmarkConfig.seeded(7, n_poses=80, K=6))


@pytest.fixture(scope="session")
def open_bench():
    """Sparsely furnished room: four objects, ten classes."""
    world = WorldSpec(min_objects=4, max_objects=4)
    return prepare_benchmark(BenchmarkConfig.seeded(7, n_poses=80, K=10, world=world))


@pytest.fixture(scope="session")
def full_bench():
    """The desk-scale benchmark pool: seed 7, K=20, 400 poses."""
    return prepare_benchmark(BenchmarkConfig.seeded(7))
