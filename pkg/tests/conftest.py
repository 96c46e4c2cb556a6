import numpy as np
import pytest

from cfcv.data import DgpConfig, generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def confounded_small():
    """One modest confounded draw shared by tests that just need real data."""
    config = DgpConfig(n=200, d=4, confounding_strength=1.0, seed=5)
    data, truth = generate_synthetic(config)
    return data, truth
