import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from capalloc.discrete import DiscreteJointDistribution

# fixed example order and no wall-clock deadline: runs are reproducible and numba compiles lazily
settings.register_profile("repro", derandomize=True, deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repro")


def random_discrete(rng: np.random.Generator, atoms: int, n: int, scale: float = 10.0) -> DiscreteJointDistribution:
    vals = np.round(rng.normal(0.0, scale, size=(atoms, n)), 3)
    p = rng.dirichlet(np.ones(atoms))
    p[-1] = max(0.0, 1.0 - p[:-1].sum())
    return DiscreteJointDistribution(vals, p / p.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
