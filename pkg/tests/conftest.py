"""Shared helpers for the test suite."""

import math

import numpy as np
import pytest

from trajtransfer.se3 import Pose


def random_pose(rng, trans_scale: float = 1.0) -> Pose:
    """Uniformly random rotation (normalized Gaussian quaternion) + translation."""
    q = rng.normal(size=4)
    t = rng.uniform(-trans_scale, trans_scale, size=3)
    return Pose(q, t)


def random_yaw_pose(rng, yaw_range: float = math.pi, trans_scale: float = 0.3) -> Pose:
    yaw = rng.uniform(-yaw_range, yaw_range)
    t = rng.uniform(-trans_scale, trans_scale, size=3)
    return Pose.from_yaw(yaw, t)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
