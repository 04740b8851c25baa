"""
Shared fixtures for the flowcount test suite
"""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import numpy as np
import pytest

from config.flowcount_config import NetworkConfig, SimConfig
from src.crowd_sim import simulate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def smoke_config():
    return SimConfig.for_smoke_test(seed=3)


@pytest.fixture
def smoke_sim(smoke_config):
    return simulate(smoke_config)


@pytest.fixture
def tiny_network():
    return NetworkConfig((2, 3, 3), 3, 2, 4)
