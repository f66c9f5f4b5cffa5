import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def make_rng(seed=0):
    return np.random.default_rng(seed)
