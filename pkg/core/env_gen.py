"""Random object generator, task sampler and episode termination"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from presets.tables import TEST_RANGES, TRAIN_RANGES
from .errors import InvalidStateError
from .physics import (
    TWO_PI, ObjectSpec, Pose2, Shape, SimConfig, Twist2, WorldState,
    angle_difference, detect_contact,
)

Range = Tuple[float, float]

_RANGE_FIELDS = (
    "mass", "inertia_axis_angle", "com_volume_pct", "friction", "drag",
    "diameter", "width", "depth", "height",
)


class RangeMode(str, Enum):
    TRAIN = "train"
    TEST = "test"


class Termination(str, Enum):
    RUNNING = "running"
    TIMEOUT = "timeout"
    FAULT = "fault"


class RandomizationRanges(BaseModel):
    """Uniform sampling ranges; Train/Test only change the endpoints"""

    model_config = ConfigDict(extra="forbid")

    mode: RangeMode = RangeMode.TRAIN
    mass: Range = TRAIN_RANGES["mass"]
    inertia_axis_angle: Range = TRAIN_RANGES["inertia_axis_angle"]
    com_volume_pct: Range = TRAIN_RANGES["com_volume_pct"]
    friction: Range = TRAIN_RANGES["friction"]
    drag: Range = TRAIN_RANGES["drag"]
    shapes: List[Shape] = Field(default_factory=lambda: [Shape(s) for s in TRAIN_RANGES["shapes"]])
    diameter: Range = TRAIN_RANGES["diameter"]
    width: Range = TRAIN_RANGES["width"]
    depth: Range = TRAIN_RANGES["depth"]
    height: Range = TRAIN_RANGES["height"]

    @field_validator(*_RANGE_FIELDS)
    @classmethod
    def _ordered(cls, value, info):
        lo, hi = value
        if lo > hi:
            raise ValueError(f"{info.field_name}: lo ({lo}) must be <= hi ({hi})")
        return value

    @field_validator("com_volume_pct")
    @classmethod
    def _percent(cls, value):
        if value[0] < 0 or value[1] > 100:
            raise ValueError("com_volume_pct must lie in [0, 100]")
        return value

    @field_validator("mass", "diameter", "width", "depth", "height")
    @classmethod
    def _positive(cls, value, info):
        if value[0] <= 0:
            raise ValueError(f"{info.field_name} range must be positive")
        return value

    @field_validator("friction", "drag")
    @classmethod
    def _non_negative(cls, value, info):
        if value[0] < 0:
            raise ValueError(f"{info.field_name} range must be non-negative")
        return value

    @field_validator("shapes")
    @classmethod
    def _some_shape(cls, value):
        if not value:
            raise ValueError("at least one shape must be enabled")
        return value

    @classmethod
    def for_mode(cls, mode: RangeMode, **overrides) -> "RandomizationRanges":
        """Table defaults for a mode, with optional per-field overrides"""
        mode = RangeMode(mode)
        table = TRAIN_RANGES if mode is RangeMode.TRAIN else TEST_RANGES
        values = {**table, **overrides, "mode": mode}
        return cls.model_validate(values)


class TaskConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    spawn_radius: float = Field(default=4.0, gt=0)
    goal_radius: float = Field(default=4.0, gt=0)
    time_limit: float = Field(default=30.0, gt=0)
    # goals already inside this tolerance at reset are resampled
    exclusion_distance: float = Field(default=0.1, ge=0)
    exclusion_yaw_deg: float = Field(default=15.0, ge=0)
    # episode ends on reaching this tolerance during training
    success_distance: float = Field(default=0.05, gt=0)
    success_yaw_deg: float = Field(default=5.0, gt=0)
    # COM random walk, m per sqrt(s); 0 disables time-varying objects
    com_drift_std: float = Field(default=0.0, ge=0)
    orientation_goal_offset: float = Field(default=1.5, ge=0)
    max_attempts: int = Field(default=1000, ge=1)


@dataclass(frozen=True)
class TaskSpec:
    robot_start: Pose2
    object_start: Pose2
    goal: Pose2
    time_limit: float = 30.0


def principal_inertia(shape: Shape, dims: Tuple[float, float, float], mass: float) -> np.ndarray:
    """Principal moments of a uniform solid box or cylinder about its center"""
    w, d, h = dims
    if Shape(shape) is Shape.CYLINDER:
        r = w / 2.0
        side = mass * (3.0 * r * r + h * h) / 12.0
        return np.array([side, side, mass * r * r / 2.0])
    return np.array([
        mass * (d * d + h * h) / 12.0,
        mass * (w * w + h * h) / 12.0,
        mass * (w * w + d * d) / 12.0,
    ])


def _axis_rotation(axis: int, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    if axis == 0:
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == 1:
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def randomize_inertia(principal, theta: float, axis: int = 2) -> np.ndarray:
    """
    Rotate the principal axes of an inertia tensor

    Args:
        principal: Diagonal tensor (3x3) or its three principal moments
        theta: Rotation angle in degrees
        axis: Principal axis to rotate about (0=x, 1=y, 2=z)

    Returns:
        R(theta) I R(theta)^T, symmetric positive definite
    """
    principal = np.asarray(principal, dtype=float)
    tensor = np.diag(principal) if principal.ndim == 1 else principal
    if np.diag(tensor).min() <= 0:
        raise InvalidStateError("Principal moments must be positive")
    R = _axis_rotation(int(axis), math.radians(theta))
    out = R @ tensor @ R.T
    return 0.5 * (out + out.T)


def com_scale(v_pct: float) -> float:
    """Linear scale of the region holding v_pct percent of the volume"""
    return (v_pct / 100.0) ** (1.0 / 3.0)


def sample_com(dims: Tuple[float, float, float], shape: Shape, v_pct: float,
               rng: np.random.Generator) -> np.ndarray:
    """Uniform COM offset inside the shape scaled about its geometric center"""
    if not 0.0 <= v_pct <= 100.0:
        raise ValueError(f"v_pct must lie in [0, 100], got {v_pct}")
    s = com_scale(v_pct)
    w, d, h = dims
    if Shape(shape) is Shape.CYLINDER:
        r = s * (w / 2.0) * math.sqrt(rng.uniform())
        phi = rng.uniform(0.0, TWO_PI)
        z = rng.uniform(-0.5, 0.5) * h * s
        return np.array([r * math.cos(phi), r * math.sin(phi), z])
    return rng.uniform(-0.5, 0.5, size=3) * np.array([w, d, h]) * s


def sample_object(ranges: RandomizationRanges, rng: np.random.Generator) -> ObjectSpec:
    """Draw one object; cylinders report dims as (diameter, diameter, height)"""
    shape = Shape(ranges.shapes[int(rng.integers(len(ranges.shapes)))])
    if shape is Shape.CYLINDER:
        diameter = rng.uniform(*ranges.diameter)
        dims = (diameter, diameter, rng.uniform(*ranges.height))
    else:
        dims = (rng.uniform(*ranges.width), rng.uniform(*ranges.depth), rng.uniform(*ranges.height))

    mass = rng.uniform(*ranges.mass)
    theta = rng.uniform(*ranges.inertia_axis_angle)
    axis = int(rng.integers(3))
    inertia = randomize_inertia(principal_inertia(shape, dims, mass), theta, axis)
    com = sample_com(dims, shape, rng.uniform(*ranges.com_volume_pct), rng)

    return ObjectSpec(
        shape=shape,
        dims=dims,
        mass=mass,
        inertia=inertia,
        com_offset=com,
        friction=rng.uniform(*ranges.friction),
        drag=rng.uniform(*ranges.drag),
    )


def _uniform_disc(rng: np.random.Generator, radius: float) -> np.ndarray:
    r = radius * math.sqrt(rng.uniform())
    phi = rng.uniform(0.0, TWO_PI)
    return np.array([r * math.cos(phi), r * math.sin(phi)])


def _pre_satisfied(start: Pose2, goal: Pose2, cfg: TaskConfig) -> bool:
    dist = float(np.linalg.norm(goal.position - start.position))
    yaw_err = abs(angle_difference(goal.yaw, start.yaw))
    return dist <= cfg.exclusion_distance and yaw_err <= math.radians(cfg.exclusion_yaw_deg)


def sample_robot_start(rng: np.random.Generator, obj: ObjectSpec, object_start: Pose2,
                       robot_dims: Tuple[float, float], cfg: TaskConfig) -> Pose2:
    """Robot pose in the spawn disc whose footprint does not overlap the object"""
    for _ in range(cfg.max_attempts):
        robot = Pose2(*_uniform_disc(rng, cfg.spawn_radius), rng.uniform(0.0, TWO_PI))
        if not detect_contact(robot, robot_dims, object_start, obj):
            return robot
    raise InvalidStateError(f"No overlap-free robot spawn after {cfg.max_attempts} attempts")


def sample_task(rng: np.random.Generator, obj: ObjectSpec, robot_dims: Tuple[float, float],
                cfg: Optional[TaskConfig] = None) -> TaskSpec:
    """Random robot/object spawn in the disc plus a goal within goal_radius of the object"""
    cfg = cfg or TaskConfig()
    object_start = Pose2(*_uniform_disc(rng, cfg.spawn_radius), rng.uniform(0.0, TWO_PI))
    robot_start = sample_robot_start(rng, obj, object_start, robot_dims, cfg)

    for _ in range(cfg.max_attempts):
        offset = _uniform_disc(rng, cfg.goal_radius)
        goal = Pose2(*(object_start.position + offset), rng.uniform(0.0, TWO_PI))
        if not _pre_satisfied(object_start, goal, cfg):
            return TaskSpec(robot_start, object_start, goal, cfg.time_limit)
    raise InvalidStateError(f"No valid goal after {cfg.max_attempts} attempts")


def orientation_task(rng: np.random.Generator, obj: ObjectSpec, robot_dims: Tuple[float, float],
                     yaw_offset_deg: float, cfg: Optional[TaskConfig] = None) -> TaskSpec:
    """Fixed goal and object position; object starts yaw_offset_deg away from the goal yaw"""
    cfg = cfg or TaskConfig()
    goal = Pose2(cfg.orientation_goal_offset, 0.0, 0.0)
    object_start = Pose2(0.0, 0.0, math.radians(yaw_offset_deg))
    robot_start = sample_robot_start(rng, obj, object_start, robot_dims, cfg)
    return TaskSpec(robot_start, object_start, goal, cfg.time_limit)


def initial_world(obj: ObjectSpec, task: TaskSpec) -> WorldState:
    return WorldState(
        robot_pose=task.robot_start,
        robot_twist=Twist2(),
        object_pose=task.object_start,
        object_twist=Twist2(),
        object=obj,
        goal_pose=task.goal,
    )


def reset(ranges: RandomizationRanges, rng: np.random.Generator, sim_cfg: Optional[SimConfig] = None,
          task_cfg: Optional[TaskConfig] = None) -> Tuple[WorldState, TaskSpec]:
    """Fresh object and task installed in a zero-time world"""
    sim_cfg = sim_cfg or SimConfig()
    obj = sample_object(ranges, rng)
    task = sample_task(rng, obj, sim_cfg.robot_dims, task_cfg)
    return initial_world(obj, task), task


def terminate(world: WorldState, task: TaskSpec) -> Termination:
    if world.fault:
        return Termination.FAULT
    if world.sim_time >= task.time_limit - 1e-9:
        return Termination.TIMEOUT
    return Termination.RUNNING


def drift_com(obj: ObjectSpec, std: float, dt: float, max_v_pct: float,
              rng: np.random.Generator) -> ObjectSpec:
    """Random-walk the COM, clamped to the max_v_pct containment region"""
    if std <= 0.0:
        return obj
    s = com_scale(max_v_pct)
    com = obj.com_offset + rng.normal(0.0, std * math.sqrt(dt), size=3)
    w, d, h = obj.dims
    com[2] = float(np.clip(com[2], -s * h / 2.0, s * h / 2.0))
    if obj.shape is Shape.CYLINDER:
        radial = math.hypot(com[0], com[1])
        limit = s * w / 2.0
        if radial > limit:
            com[:2] *= limit / radial
    else:
        com[0] = float(np.clip(com[0], -s * w / 2.0, s * w / 2.0))
        com[1] = float(np.clip(com[1], -s * d / 2.0, s * d / 2.0))
    return replace(obj, com_offset=com)
