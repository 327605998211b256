import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from platoon.core import GlobalParams, VehicleParams  # noqa: E402
from utils import load_config  # noqa: E402


@pytest.fixture
def gp():
    """tau 0.1, speeds in [0, 20], delta1 1, delta2 0.5, margin 2."""
    return GlobalParams()


@pytest.fixture
def vp():
    """a in [-5, 3], no uncertainty, length 5."""
    return VehicleParams()


@pytest.fixture
def small_cfg():
    return load_config(overrides={"experiment.samples": 4, "experiment.rollout_steps": 10})
