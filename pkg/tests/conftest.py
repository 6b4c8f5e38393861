import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from core.config import RunConfig, load_config  # noqa: E402
from core.env_gen import principal_inertia  # noqa: E402
from core.physics import ObjectSpec, Pose2, Shape, Twist2, WorldState  # noqa: E402


@pytest.fixture
def make_object():
    """Factory for uniform boxes/cylinders with chosen friction, drag and COM"""
    def factory(shape=Shape.BOX, dims=(1.0, 1.0, 1.0), mass=10.0, friction=0.3, drag=0.0, com=(0.0, 0.0, 0.0)):
        inertia = np.diag(principal_inertia(shape, dims, mass))
        return ObjectSpec(shape, dims, mass, inertia, np.asarray(com, dtype=float), friction, drag)
    return factory


@pytest.fixture
def make_world(make_object):
    def factory(robot=Pose2(-3.0, 0.0, 0.0), obj_pose=Pose2(0.0, 0.0, 0.0), goal=Pose2(2.0, 0.0, 0.0),
                obj=None, object_twist=Twist2(), robot_twist=Twist2()):
        return WorldState(robot, robot_twist, obj_pose, object_twist, obj or make_object(), goal)
    return factory


@pytest.fixture
def smoke_config(tmp_path) -> RunConfig:
    """Tiny networks, 2 envs, 2-second episodes; outputs under tmp_path"""
    config = load_config(ROOT / "configs" / "smoke.json")
    paths = config.paths.model_copy(update={"out_dir": str(tmp_path / "runs"), "data_dir": str(tmp_path / "data")})
    return config.model_copy(update={"paths": paths, "workers": 1})
