"""Fixed-step planar world: one servoed robot rectangle pushing one box or cylinder"""

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import InvalidStateError

TWO_PI = 2.0 * math.pi
ACTION_LIMIT = 1.5
_EPS = 1e-12


def wrap_angle(yaw: float) -> float:
    """Normalize an angle to [0, 2pi)"""
    wrapped = math.fmod(yaw, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    # fmod of a tiny negative number rounds up to exactly 2pi
    if wrapped >= TWO_PI:
        wrapped = 0.0
    return wrapped


def angle_difference(a: float, b: float) -> float:
    """Shortest signed angle a - b, in [-pi, pi]"""
    return math.remainder(a - b, TWO_PI)


def rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def cross2(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _spin(w: float, r: np.ndarray) -> np.ndarray:
    """Planar w x r"""
    return np.array([-w * r[1], w * r[0]])


class Shape(str, Enum):
    BOX = "box"
    CYLINDER = "cylinder"


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.yaw)):
            raise InvalidStateError(f"Non-finite pose: ({self.x}, {self.y}, {self.yaw})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def heading(self) -> np.ndarray:
        """Unit x-axis of the frame, in world coordinates"""
        return np.array([math.cos(self.yaw), math.sin(self.yaw)])

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 2) expressed in this frame"""
        return (np.asarray(points, dtype=float) - self.position) @ rotation(self.yaw)

    def to_world(self, points: np.ndarray) -> np.ndarray:
        """Frame-local points (..., 2) expressed in world coordinates"""
        return np.asarray(points, dtype=float) @ rotation(self.yaw).T + self.position


@dataclass(frozen=True)
class Twist2:
    vx: float = 0.0
    vy: float = 0.0
    wz: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.vx, self.vy, self.wz)):
            raise InvalidStateError(f"Non-finite twist: ({self.vx}, {self.vy}, {self.wz})")
        object.__setattr__(self, "vx", float(self.vx))
        object.__setattr__(self, "vy", float(self.vy))
        object.__setattr__(self, "wz", float(self.wz))

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.wz])

    @classmethod
    def from_array(cls, values) -> "Twist2":
        return cls(float(values[0]), float(values[1]), float(values[2]))


@dataclass(frozen=True, eq=False)
class ObjectSpec:
    """One randomized object. dims = (width along local x, depth along local y, height)"""

    shape: Shape
    dims: Tuple[float, float, float]
    mass: float
    inertia: np.ndarray
    com_offset: np.ndarray
    friction: float
    drag: float

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape(self.shape))
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float).reshape(3, 3))
        object.__setattr__(self, "com_offset", np.asarray(self.com_offset, dtype=float).reshape(3))

        if self.mass <= 0:
            raise InvalidStateError(f"Object mass must be positive, got {self.mass}")
        if min(self.dims) <= 0:
            raise InvalidStateError(f"Object dimensions must be positive, got {self.dims}")
        if self.friction < 0 or self.drag < 0:
            raise InvalidStateError("Friction and drag must be non-negative")
        if not np.allclose(self.inertia, self.inertia.T, atol=1e-9):
            raise InvalidStateError("Inertia tensor must be symmetric")
        if np.linalg.eigvalsh(self.inertia).min() <= 0:
            raise InvalidStateError("Inertia tensor must be positive definite")
        if not self.contains(self.com_offset):
            raise InvalidStateError(f"COM offset {self.com_offset} lies outside the object")

    @property
    def izz(self) -> float:
        return float(self.inertia[2, 2])

    @property
    def radius(self) -> float:
        return self.dims[0] / 2.0

    def contains(self, offset: np.ndarray, scale: float = 1.0) -> bool:
        """Whether an offset from the geometric center lies inside the (scaled) volume"""
        half_h = scale * self.dims[2] / 2.0 + 1e-12
        if abs(offset[2]) > half_h:
            return False
        if self.shape is Shape.CYLINDER:
            return math.hypot(offset[0], offset[1]) <= scale * self.radius + 1e-12
        return (abs(offset[0]) <= scale * self.dims[0] / 2.0 + 1e-12
                and abs(offset[1]) <= scale * self.dims[1] / 2.0 + 1e-12)

    def torsion_radius(self) -> float:
        """Characteristic lever arm of the ground friction torque"""
        if self.shape is Shape.CYLINDER:
            # exact for a uniform disc: tau = (2/3) mu m g R
            return self.dims[0] / 3.0
        return (self.dims[0] + self.dims[1]) / 6.0


@dataclass(frozen=True)
class Contact:
    point: np.ndarray
    normal: np.ndarray
    depth: float


@dataclass(frozen=True, eq=False)
class WorldState:
    """Robot twist is body-frame; object twist is the world-frame velocity of its geometric center"""

    robot_pose: Pose2
    robot_twist: Twist2
    object_pose: Pose2
    object_twist: Twist2
    object: ObjectSpec
    goal_pose: Pose2
    in_contact: bool = False
    sim_time: float = 0.0
    step_count: int = 0
    fault: bool = False


class ServoModel(BaseModel):
    """First-order velocity tracker standing in for the legged low-level controller"""

    model_config = ConfigDict(extra="forbid")

    time_constant: float = Field(default=0.05, gt=0)
    max_lin_accel: float = Field(default=6.0, gt=0)
    max_ang_accel: float = Field(default=8.0, gt=0)
    tracking_noise_std: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @field_validator("tracking_noise_std")
    @classmethod
    def _noise_non_negative(cls, value):
        if any(v < 0 for v in value):
            raise ValueError("tracking_noise_std entries must be >= 0")
        return value


class SimConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt: float = Field(default=0.01, gt=0)
    gravity: float = Field(default=9.81, gt=0)
    # extent along body x, extent along body y
    robot_dims: Tuple[float, float] = (0.7, 0.45)
    substeps: int = Field(default=20, ge=1)
    contact_slop: float = Field(default=1e-3, ge=0)
    # fraction of penetration beyond the slop removed per step
    contact_stiffness: float = Field(default=1.0, gt=0, le=1)
    restitution: float = Field(default=0.0, ge=0, le=1)
    workspace_bound: float = Field(default=20.0, gt=0)
    seed: int = 0

    @field_validator("robot_dims")
    @classmethod
    def _dims_positive(cls, value):
        if min(value) <= 0:
            raise ValueError("robot_dims must be positive")
        return value

    @property
    def low_level_hz(self) -> float:
        return 1.0 / self.dt

    @property
    def high_level_dt(self) -> float:
        return self.dt * self.substeps


def velocity_servo(
    current: Twist2,
    commanded: Twist2,
    servo: ServoModel,
    dt: float,
    rng: Optional[np.random.Generator] = None
) -> Twist2:
    """
    One tick of the velocity tracker

    First-order lag toward the command, then per-axis acceleration capping,
    then additive Gaussian tracking noise (only when an rng is supplied).
    """
    if dt <= 0:
        raise InvalidStateError(f"dt must be positive, got {dt}")

    v = current.as_array()
    v_cmd = commanded.as_array()
    alpha = min(1.0, dt / servo.time_constant)
    delta = (v_cmd - v) * alpha

    caps = np.array([servo.max_lin_accel, servo.max_lin_accel, servo.max_ang_accel]) * dt
    delta = np.clip(delta, -caps, caps)
    out = v + delta

    noise_std = np.asarray(servo.tracking_noise_std, dtype=float)
    if rng is not None and np.any(noise_std > 0):
        out = out + rng.normal(0.0, 1.0, size=3) * noise_std

    if not np.all(np.isfinite(out)):
        raise InvalidStateError(f"Servo produced non-finite twist {out}")
    return Twist2.from_array(out)


def rectangle_vertices(pose: Pose2, size: Tuple[float, float]) -> np.ndarray:
    """Counter-clockwise world vertices of a rectangle centered on pose"""
    hx, hy = size[0] / 2.0, size[1] / 2.0
    local = np.array([[hx, hy], [-hx, hy], [-hx, -hy], [hx, -hy]])
    return pose.to_world(local)


def _inside_rectangle(points: np.ndarray, pose: Pose2, size: Tuple[float, float]) -> np.ndarray:
    local = pose.to_local(points)
    return ((np.abs(local[:, 0]) < size[0] / 2.0 - _EPS)
            & (np.abs(local[:, 1]) < size[1] / 2.0 - _EPS))


def _segment_intersections(poly_a: np.ndarray, poly_b: np.ndarray) -> List[np.ndarray]:
    points = []
    for i in range(len(poly_a)):
        p, p2 = poly_a[i], poly_a[(i + 1) % len(poly_a)]
        r = p2 - p
        for j in range(len(poly_b)):
            q, q2 = poly_b[j], poly_b[(j + 1) % len(poly_b)]
            s = q2 - q
            denom = cross2(r, s)
            if abs(denom) < _EPS:
                continue
            t = cross2(q - p, s) / denom
            u = cross2(q - p, r) / denom
            if 0.0 <= t <= 1.0 and 0.0 <= u <= 1.0:
                points.append(p + t * r)
    return points


def _box_box_contact(robot_pose, robot_dims, object_pose, object_dims) -> List[Contact]:
    robot_vertices = rectangle_vertices(robot_pose, robot_dims)
    object_vertices = rectangle_vertices(object_pose, object_dims)

    # separating-axis test; robot axes first so ties resolve toward the robot frame
    axes = [robot_pose.heading, rotation(robot_pose.yaw)[:, 1],
            object_pose.heading, rotation(object_pose.yaw)[:, 1]]
    depth = math.inf
    normal = None
    for axis in axes:
        proj_r = robot_vertices @ axis
        proj_o = object_vertices @ axis
        overlap = min(proj_r.max() - proj_o.min(), proj_o.max() - proj_r.min())
        if overlap <= _EPS:
            return []
        if overlap < depth - 1e-15:
            depth = overlap
            normal = axis

    direction = object_pose.position - robot_pose.position
    if float(direction @ normal) < 0.0:
        normal = -normal

    features = list(robot_vertices[_inside_rectangle(robot_vertices, object_pose, object_dims)])
    features += list(object_vertices[_inside_rectangle(object_vertices, robot_pose, robot_dims)])
    features += _segment_intersections(robot_vertices, object_vertices)
    point = np.mean(features, axis=0) if features else (robot_pose.position + object_pose.position) / 2.0

    return [Contact(point=point, normal=normal / np.linalg.norm(normal), depth=float(depth))]


def _box_disc_contact(robot_pose, robot_dims, center: np.ndarray, radius: float) -> List[Contact]:
    hx, hy = robot_dims[0] / 2.0, robot_dims[1] / 2.0
    c_local = robot_pose.to_local(center)
    closest = np.array([min(max(c_local[0], -hx), hx), min(max(c_local[1], -hy), hy)])
    offset = c_local - closest
    dist = float(np.linalg.norm(offset))
    R = rotation(robot_pose.yaw)

    if dist > _EPS:
        if dist >= radius - _EPS:
            return []
        normal_local = offset / dist
        point_local = closest
        depth = radius - dist
    else:
        # disc center inside the robot footprint: push out through the nearest face
        gaps = np.array([hx - abs(c_local[0]), hy - abs(c_local[1])])
        axis = int(np.argmin(gaps))
        normal_local = np.zeros(2)
        normal_local[axis] = 1.0 if c_local[axis] >= 0.0 else -1.0
        point_local = c_local.copy()
        point_local[axis] = normal_local[axis] * (hx if axis == 0 else hy)
        depth = radius + float(gaps[axis])

    normal = R @ normal_local
    return [Contact(point=robot_pose.to_world(point_local), normal=normal / np.linalg.norm(normal),
                    depth=float(depth))]


def detect_contact(
    robot_pose: Pose2,
    robot_dims: Tuple[float, float],
    object_pose: Pose2,
    obj: ObjectSpec
) -> List[Contact]:
    """
    Footprint overlap between the robot rectangle and the object rectangle/disc

    Returns:
        Empty list when disjoint (or touching with zero area), otherwise one contact
        whose normal points from the robot into the object.
    """
    if obj.shape is Shape.CYLINDER:
        return _box_disc_contact(robot_pose, robot_dims, object_pose.position, obj.radius)
    return _box_box_contact(robot_pose, robot_dims, object_pose, obj.dims[:2])


def _apply_ground_friction(v_com: np.ndarray, w: float, obj: ObjectSpec, cfg: SimConfig):
    """Coulomb slide and spin friction plus linear drag, never reversing motion"""
    speed = float(np.linalg.norm(v_com))
    dv = obj.friction * cfg.gravity * cfg.dt
    if speed <= dv:
        v_com = np.zeros(2)
    else:
        v_com = v_com * ((speed - dv) / speed)
    v_com = v_com * max(0.0, 1.0 - obj.drag * cfg.dt / obj.mass)

    dw = obj.friction * obj.mass * cfg.gravity * obj.torsion_radius() * cfg.dt / obj.izz
    if abs(w) <= dw:
        w = 0.0
    else:
        w = w - math.copysign(dw, w)
    return v_com, w


def _resolve_contact(contact: Contact, com_pos, v_com, w, robot_pose, robot_v_world, robot_w,
                     obj: ObjectSpec, cfg: SimConfig):
    """Projection plus normal/tangential impulses; the robot has infinite mass"""
    n = contact.normal
    correction = max(contact.depth - cfg.contact_slop, 0.0) * cfg.contact_stiffness
    com_pos = com_pos + n * correction
    point = contact.point + n * correction

    r = point - com_pos
    v_robot_at = robot_v_world + _spin(robot_w, point - robot_pose.position)
    v_rel = v_com + _spin(w, r) - v_robot_at
    vn = float(v_rel @ n)
    if vn >= 0.0:
        return com_pos, v_com, w

    inv_izz = 1.0 / obj.izz
    rn = cross2(r, n)
    jn = -(1.0 + cfg.restitution) * vn / (1.0 / obj.mass + rn * rn * inv_izz)
    v_com = v_com + n * (jn / obj.mass)
    w = w + rn * jn * inv_izz

    v_rel = v_com + _spin(w, r) - v_robot_at
    tangent = v_rel - (v_rel @ n) * n
    t_norm = float(np.linalg.norm(tangent))
    if t_norm > _EPS:
        t = tangent / t_norm
        rt = cross2(r, t)
        jt = -t_norm / (1.0 / obj.mass + rt * rt * inv_izz)
        jt = max(jt, -obj.friction * jn)
        v_com = v_com + t * (jt / obj.mass)
        w = w + rt * jt * inv_izz
    return com_pos, v_com, w


def step(
    world: WorldState,
    commanded: Twist2,
    servo: ServoModel,
    cfg: SimConfig,
    rng: Optional[np.random.Generator] = None
) -> WorldState:
    """Advance the world by one low-level tick (cfg.dt)"""
    cmd = commanded.as_array()
    if np.any(np.abs(cmd) > ACTION_LIMIT + 1e-9):
        raise InvalidStateError(f"Command {cmd} exceeds action bounds +/-{ACTION_LIMIT}")

    dt = cfg.dt
    obj = world.object

    robot_twist = velocity_servo(world.robot_twist, commanded, servo, dt, rng)
    robot_v_world = rotation(world.robot_pose.yaw) @ np.array([robot_twist.vx, robot_twist.vy])
    robot_pose = Pose2(
        world.robot_pose.x + robot_v_world[0] * dt,
        world.robot_pose.y + robot_v_world[1] * dt,
        world.robot_pose.yaw + robot_twist.wz * dt,
    )
    robot_v_world = rotation(robot_pose.yaw) @ np.array([robot_twist.vx, robot_twist.vy])

    # free motion of the object about its COM
    com_planar = obj.com_offset[:2]
    r_com = rotation(world.object_pose.yaw) @ com_planar
    com_pos = world.object_pose.position + r_com
    w = world.object_twist.wz
    v_com = np.array([world.object_twist.vx, world.object_twist.vy]) + _spin(w, r_com)

    v_com, w = _apply_ground_friction(v_com, w, obj, cfg)
    com_pos = com_pos + v_com * dt
    yaw = world.object_pose.yaw + w * dt
    r_com = rotation(yaw) @ com_planar
    object_pose = Pose2(*(com_pos - r_com), yaw)

    for contact in detect_contact(robot_pose, cfg.robot_dims, object_pose, obj):
        com_pos, v_com, w = _resolve_contact(
            contact, com_pos, v_com, w, robot_pose, robot_v_world, robot_twist.wz, obj, cfg
        )
        object_pose = Pose2(*(com_pos - r_com), yaw)

    v_center = v_com - _spin(w, r_com)
    in_contact = bool(detect_contact(robot_pose, cfg.robot_dims, object_pose, obj))
    fault = world.fault or max(abs(object_pose.x), abs(object_pose.y)) > cfg.workspace_bound
    step_count = world.step_count + 1

    return replace(
        world,
        robot_pose=robot_pose,
        robot_twist=robot_twist,
        object_pose=object_pose,
        object_twist=Twist2(v_center[0], v_center[1], w),
        in_contact=in_contact,
        sim_time=step_count * dt,
        step_count=step_count,
        fault=fault,
    )


def kinetic_energy(world: WorldState) -> float:
    """Object kinetic energy about its COM"""
    obj = world.object
    r_com = rotation(world.object_pose.yaw) @ obj.com_offset[:2]
    v_com = np.array([world.object_twist.vx, world.object_twist.vy]) + _spin(world.object_twist.wz, r_com)
    return 0.5 * obj.mass * float(v_com @ v_com) + 0.5 * obj.izz * world.object_twist.wz ** 2
