import numpy as np
import pytest

from detrend.tensor import Prng


@pytest.fixture
def prng():
    return Prng(0)


@pytest.fixture
def rng64():
    return np.random.default_rng(1234)
