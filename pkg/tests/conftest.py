import numpy as np
import pytest

from histofusion.core.tensor import default_dtype


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def f64():
    """Run the body with float64 tensors (finite-difference checks)."""
    with default_dtype(np.float64):
        yield


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training experiment")
