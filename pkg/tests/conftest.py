import numpy as np
import pytest

from hcft import tensor as T


@pytest.fixture(autouse=True)
def float64():
    # verification runs in double precision; training tests opt back into float32 explicitly
    with T.precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
