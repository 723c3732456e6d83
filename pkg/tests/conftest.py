import numpy as np
import pytest

from dynmap.config import SimConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cfg():
    """A short, sparse scenario that runs in well under a second."""
    return SimConfig(n_vehicles=12, area_km2=0.12, T_sim=6.0)
