"""Shared fixtures of the semmap tests."""
import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from semmap.geometry import CameraModel, CameraPose
from semmap.sceneGenerator import SceneSpec, generate


@pytest.fixture
def rng():
    """Seeded generator; every test gets the same stream."""
    return np.random.default_rng(12345)


@pytest.fixture
def cam100():
    """100 x 100 raster with the principal point in the center."""
    return CameraModel(100.0, 100.0, 50.0, 50.0, 100, 100)


@pytest.fixture
def forwardPose():
    """Camera at 1.5 m height looking along world +x (x right = -y, y down = -z)."""
    rotation = Rotation.from_matrix(np.column_stack([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]]))
    return CameraPose.fromRotation(rotation, np.array([0.0, 0.0, 1.5]))


@pytest.fixture(scope='session')
def smallSpec():
    """Short street with coarse sampling, one transient object in one of six rounds."""
    return SceneSpec(seed=7, extent=12.0, roadSpacing=0.1, objectSpacing=0.1, poles=2, trafficLights=1,
                     trafficSigns=1, trees=1, parkedCars=1, transients=1, transientRounds=1, rounds=6,
                     waypoints=[(2.0, 0.0), (10.0, 0.0)])


@pytest.fixture(scope='session')
def smallScene(smallSpec):
    """Generated rounds, poses and membership of smallSpec."""
    return generate(smallSpec)
