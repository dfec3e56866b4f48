import numpy as np
import pytest

from fedavg_drift.objective import problem_from_arrays
from fedavg_drift.synthgen import SynthConfig, generate


@pytest.fixture
def two_client_1d():
    """1-D clients A = (1, 2), b = (1, -1), equal weights, w_ref = 0."""
    return problem_from_arrays([1.0, 2.0], [1.0, -1.0], [0.0])


@pytest.fixture(scope="session")
def default_synthetic():
    return generate(SynthConfig(seed=0))


@pytest.fixture(scope="session")
def small_synthetic():
    return generate(SynthConfig(d=5, M=8, n=20, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
