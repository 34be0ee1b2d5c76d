import numpy as np
import pytest

from faceflow.numerics import set_default_dtype


@pytest.fixture(autouse=True)
def float64_default():
    """Tests run in float64 unless they opt into float32 explicitly."""
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(np.random.PCG64(1234))
