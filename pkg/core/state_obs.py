"""
Observation, privileged vector, key points, history rings and the success predicate

Layouts are fixed; LAYOUT_SIGNATURE is hashed into every checkpoint.
"""

import json
import math
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ShapeMismatchError
from .physics import ObjectSpec, Pose2, Shape, WorldState, angle_difference, rotation

OBS_DIM = 33
PRIV_DIM = 22
ACTION_DIM = 3
KEYPOINT_COUNT = 8
KEYPOINT_DIM = 3 * KEYPOINT_COUNT
HISTORY_LEN = 20
STUDENT_STEP_DIM = OBS_DIM + ACTION_DIM

OBS_LAYOUT: List[Tuple[str, int]] = [
    ("robot_heading", 3),
    ("robot_lin_vel", 3),
    ("robot_ang_vel", 3),
    ("front_left_corner", 3),
    ("front_right_corner", 3),
    ("dir_robot_object", 2),
    ("dist_robot_object", 1),
    ("dir_object_goal", 2),
    ("dist_object_goal", 1),
    ("dir_robot_goal", 2),
    ("dist_robot_goal", 1),
    ("object_vel_robot_frame", 3),
    ("axes_robot_object", 2),
    ("axes_robot_goal", 2),
    ("axes_object_goal", 2),
]

PRIV_LAYOUT: List[Tuple[str, int]] = [
    ("object_type", 3),
    ("dims", 3),
    ("mass", 1),
    ("com", 3),
    ("inertia", 9),
    ("friction", 1),
    ("drag", 1),
    ("contact", 1),
]

# slots zeroed when inertial parameters are hidden from the teacher
INERTIAL_FIELDS = ("mass", "com", "inertia")

# Key point order: bottom face (z = 0) then top face (z = height); within a face,
# counter-clockwise in the object frame starting at (-w/2, -d/2).
KEYPOINT_CORNERS = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0))

_SHAPE_SLOT = {Shape.BOX: 0, Shape.CYLINDER: 1}


def layout_slices(layout: List[Tuple[str, int]]) -> Dict[str, slice]:
    slices, start = {}, 0
    for name, width in layout:
        slices[name] = slice(start, start + width)
        start += width
    return slices


OBS_SLICES = layout_slices(OBS_LAYOUT)
PRIV_SLICES = layout_slices(PRIV_LAYOUT)

for _layout, _dim in ((OBS_LAYOUT, OBS_DIM), (PRIV_LAYOUT, PRIV_DIM)):
    if sum(w for _, w in _layout) != _dim:
        raise ShapeMismatchError(f"layout widths sum to {sum(w for _, w in _layout)}, expected {_dim}")

LAYOUT_SIGNATURE = json.dumps({
    "obs": OBS_LAYOUT,
    "priv": PRIV_LAYOUT,
    "keypoints": KEYPOINT_CORNERS,
    "history_len": HISTORY_LEN,
    "action_dim": ACTION_DIM,
}, sort_keys=True)


def inertial_mask() -> np.ndarray:
    """Boolean mask over the privileged vector, True on inertial slots"""
    mask = np.zeros(PRIV_DIM, dtype=bool)
    for name in INERTIAL_FIELDS:
        mask[PRIV_SLICES[name]] = True
    return mask


def key_points(object_pose: Pose2, dims, robot_pose: Pose2) -> np.ndarray:
    """
    Corners of the object's upright bounding box in the robot base frame

    Args:
        object_pose: Object geometric center
        dims: (width, depth, height); cylinders pass (diameter, diameter, height)
        robot_pose: Frame the points are expressed in

    Returns:
        24 reals, 8 (x, y, z) points in KEYPOINT_CORNERS order
    """
    w, d, h = (float(v) for v in dims)
    if min(w, d, h) <= 0:
        raise ValueError(f"dims must be positive, got {dims}")
    local = np.array(KEYPOINT_CORNERS) * np.array([w / 2.0, d / 2.0])
    planar = robot_pose.to_local(object_pose.to_world(local))
    points = np.zeros((KEYPOINT_COUNT, 3))
    points[:4, :2] = planar
    points[4:, :2] = planar
    points[4:, 2] = h
    return points.reshape(-1)


def _direction(start: np.ndarray, end: np.ndarray) -> Tuple[np.ndarray, float]:
    diff = end - start
    dist = float(np.linalg.norm(diff))
    if dist < 1e-12:
        return np.zeros(2), 0.0
    return diff / dist, dist


def _axes_pair(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    """(dot, |cross|) of two unit planar axes"""
    return float(a @ b), abs(float(a[0] * b[1] - a[1] * b[0]))


def build_observation(world: WorldState, robot_dims: Tuple[float, float]) -> np.ndarray:
    """33-d observation; planar quantities embedded with z = 0"""
    robot, obj, goal = world.robot_pose, world.object_pose, world.goal_pose
    heading = robot.heading
    half_l, half_w = robot_dims[0] / 2.0, robot_dims[1] / 2.0

    o = np.zeros(OBS_DIM)
    o[OBS_SLICES["robot_heading"]] = (heading[0], heading[1], 0.0)
    o[OBS_SLICES["robot_lin_vel"]] = (world.robot_twist.vx, world.robot_twist.vy, 0.0)
    o[OBS_SLICES["robot_ang_vel"]] = (0.0, 0.0, world.robot_twist.wz)
    o[OBS_SLICES["front_left_corner"]] = (half_l, half_w, 0.0)
    o[OBS_SLICES["front_right_corner"]] = (half_l, -half_w, 0.0)

    for name, start, end in (("robot_object", robot, obj), ("object_goal", obj, goal),
                             ("robot_goal", robot, goal)):
        direction, dist = _direction(start.position, end.position)
        o[OBS_SLICES[f"dir_{name}"]] = direction
        o[OBS_SLICES[f"dist_{name}"]] = dist

    v_body = rotation(robot.yaw).T @ np.array([world.object_twist.vx, world.object_twist.vy])
    o[OBS_SLICES["object_vel_robot_frame"]] = (v_body[0], v_body[1], 0.0)

    o[OBS_SLICES["axes_robot_object"]] = _axes_pair(heading, obj.heading)
    o[OBS_SLICES["axes_robot_goal"]] = _axes_pair(heading, goal.heading)
    o[OBS_SLICES["axes_object_goal"]] = _axes_pair(obj.heading, goal.heading)
    return o


def build_privileged(spec: ObjectSpec, in_contact: bool, mask_inertial: bool = False) -> np.ndarray:
    """22-d privileged vector; inertia flattened row-major"""
    x = np.zeros(PRIV_DIM)
    x[PRIV_SLICES["object_type"].start + _SHAPE_SLOT[spec.shape]] = 1.0
    x[PRIV_SLICES["dims"]] = spec.dims
    x[PRIV_SLICES["mass"]] = spec.mass
    x[PRIV_SLICES["com"]] = spec.com_offset
    x[PRIV_SLICES["inertia"]] = spec.inertia.reshape(-1)
    x[PRIV_SLICES["friction"]] = spec.friction
    x[PRIV_SLICES["drag"]] = spec.drag
    x[PRIV_SLICES["contact"]] = 1.0 if in_contact else 0.0
    if mask_inertial:
        x[inertial_mask()] = 0.0
    return x


def yaw_error(a: Pose2, b: Pose2) -> float:
    """Shortest absolute yaw difference, radians"""
    return abs(angle_difference(a.yaw, b.yaw))


def pose_error(object_pose: Pose2, goal_pose: Pose2) -> Tuple[float, float]:
    """(planar distance m, wrapped yaw error rad)"""
    return float(np.linalg.norm(goal_pose.position - object_pose.position)), yaw_error(object_pose, goal_pose)


def success(object_pose: Pose2, goal_pose: Pose2, d_tol: float, theta_tol: float) -> bool:
    """Whether the object is within d_tol meters and theta_tol degrees of the goal"""
    if d_tol <= 0 or theta_tol <= 0:
        raise ValueError("Tolerances must be positive")
    dist, yaw_err = pose_error(object_pose, goal_pose)
    return dist <= d_tol + 1e-12 and yaw_err <= math.radians(theta_tol) + 1e-12


class HistoryBuffers:
    """
    Fixed-capacity rings, oldest row first, zero-filled until written

    privileged/observations advance once per physics step; actions once per
    high-level step. Each observation row is paired with the latest
    high-level action at the time it was pushed.
    """

    def __init__(self, capacity: int = HISTORY_LEN):
        self.capacity = capacity
        self.privileged = np.zeros((capacity, PRIV_DIM))
        self.observations = np.zeros((capacity, OBS_DIM))
        self.paired_actions = np.zeros((capacity, ACTION_DIM))
        self.actions = np.zeros((capacity, ACTION_DIM))
        self.latest_action = np.zeros(ACTION_DIM)
        self.physics_pushes = 0
        self.action_pushes = 0

    @staticmethod
    def _roll_in(ring: np.ndarray, row: np.ndarray) -> None:
        ring[:-1] = ring[1:]
        ring[-1] = row

    def copy(self) -> "HistoryBuffers":
        out = HistoryBuffers(self.capacity)
        for name in ("privileged", "observations", "paired_actions", "actions", "latest_action"):
            setattr(out, name, getattr(self, name).copy())
        out.physics_pushes = self.physics_pushes
        out.action_pushes = self.action_pushes
        return out


def _checked(value, width: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.shape[0] != width:
        raise ShapeMismatchError(f"{name} must have {width} entries, got {arr.shape[0]}")
    return arr


def push_history(buffers: HistoryBuffers, o: Optional[np.ndarray] = None,
                 x: Optional[np.ndarray] = None, a: Optional[np.ndarray] = None) -> HistoryBuffers:
    """Push any of o, x, a; an action lands before an observation pushed in the same call"""
    if a is not None:
        a = _checked(a, ACTION_DIM, "action")
        HistoryBuffers._roll_in(buffers.actions, a)
        buffers.latest_action = a.copy()
        buffers.action_pushes += 1
    if x is not None:
        HistoryBuffers._roll_in(buffers.privileged, _checked(x, PRIV_DIM, "privileged"))
    if o is not None:
        HistoryBuffers._roll_in(buffers.observations, _checked(o, OBS_DIM, "observation"))
        HistoryBuffers._roll_in(buffers.paired_actions, buffers.latest_action)
    if o is not None or x is not None:
        buffers.physics_pushes += 1
    return buffers


def snapshot(buffers: HistoryBuffers) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns:
        X (N, 22) privileged history and H (N, 36) rows of [o_i, a_i], oldest first
    """
    X = buffers.privileged.copy()
    H = np.concatenate([buffers.observations, buffers.paired_actions], axis=1)
    return X, H
