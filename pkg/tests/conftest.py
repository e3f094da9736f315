import numpy as np
import pytest

from anderson_lab.lattice import PotentialSpec


@pytest.fixture
def uniform01():
    return PotentialSpec("uniform", 0.0, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
