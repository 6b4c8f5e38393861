"""Intrinsic/extrinsic push rewards with the near-goal intrinsic switch"""

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from presets.tables import REWARD_COEFFICIENTS
from .errors import ShapeMismatchError
from .physics import WorldState
from .state_obs import ACTION_DIM, KEYPOINT_DIM, key_points, pose_error


class SignMode(str, Enum):
    VERBATIM = "verbatim"
    NEGATED = "negated"


class ExtrinsicMetric(str, Enum):
    KEY_POINTS = "key_points"
    POSE_ERROR = "pose_error"


class RewardCoeffs(BaseModel):
    model_config = ConfigDict(extra="forbid")

    k1: float = REWARD_COEFFICIENTS["k1"]
    k2: float = REWARD_COEFFICIENTS["k2"]
    k3: float = REWARD_COEFFICIENTS["k3"]
    k4: float = REWARD_COEFFICIENTS["k4"]
    k5: float = REWARD_COEFFICIENTS["k5"]
    k6: float = REWARD_COEFFICIENTS["k6"]
    k7: float = REWARD_COEFFICIENTS["k7"]
    k8: float = REWARD_COEFFICIENTS["k8"]


class RewardConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    coeffs: RewardCoeffs = Field(default_factory=RewardCoeffs)
    # sign of the r3/r4 exponents: verbatim uses exp(-v), negated exp(+v)
    sign_mode: SignMode = SignMode.VERBATIM
    extrinsic_sign: SignMode = SignMode.VERBATIM
    # None = natural log
    log_base: Optional[float] = Field(default=None, gt=1.0)
    switch_radius: float = Field(default=0.2, ge=0)
    intrinsic_switch: bool = True
    extrinsic_metric: ExtrinsicMetric = ExtrinsicMetric.KEY_POINTS


@dataclass
class RewardState:
    prev_intrinsic: float = 0.0
    prev_action: np.ndarray = field(default_factory=lambda: np.zeros(ACTION_DIM))
    prev_prev_action: np.ndarray = field(default_factory=lambda: np.zeros(ACTION_DIM))

    def advance(self, action: np.ndarray) -> None:
        self.prev_prev_action = self.prev_action
        self.prev_action = np.asarray(action, dtype=float).copy()


@dataclass(frozen=True)
class RewardBreakdown:
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float
    r6: float
    intrinsic: float
    extrinsic: float
    total: float
    frozen: bool

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def _log(value: float, base: Optional[float]) -> float:
    return math.log(value) if base is None else math.log(value, base)


def _scaled_log_error(error: float, coeffs: RewardCoeffs, sign: SignMode, log_base: Optional[float]) -> float:
    value = coeffs.k8 * coeffs.k2 * _log(error + 0.05, log_base)
    return -value if SignMode(sign) is SignMode.NEGATED else value


def extrinsic(g_goal: np.ndarray, g_object: np.ndarray, coeffs: Optional[RewardCoeffs] = None,
              sign: SignMode = SignMode.VERBATIM, log_base: Optional[float] = None) -> float:
    """k8 * k2 * log(||G_goal - G_object|| + 0.05) over the flattened 24-d sets"""
    coeffs = coeffs or RewardCoeffs()
    g_goal = np.asarray(g_goal, dtype=float).reshape(-1)
    g_object = np.asarray(g_object, dtype=float).reshape(-1)
    if g_goal.shape[0] != KEYPOINT_DIM or g_object.shape[0] != KEYPOINT_DIM:
        raise ShapeMismatchError(f"Key point sets must have {KEYPOINT_DIM} entries")
    return _scaled_log_error(float(np.linalg.norm(g_goal - g_object)), coeffs, sign, log_base)


def extrinsic_pose_error(dist: float, yaw_err: float, coeffs: Optional[RewardCoeffs] = None,
                         sign: SignMode = SignMode.VERBATIM, log_base: Optional[float] = None) -> float:
    """Same scaled log form over the sum of position and orientation error norms"""
    return _scaled_log_error(dist + yaw_err, coeffs or RewardCoeffs(), sign, log_base)


def intrinsic_components(world: WorldState, action: np.ndarray, state: RewardState,
                         coeffs: Optional[RewardCoeffs] = None,
                         sign_mode: SignMode = SignMode.VERBATIM) -> Tuple[float, float, float, float, float]:
    """
    Shaping terms (r1, r3, r4, r5, r6)

    r1 proximity of robot and object, r3 object velocity along the robot heading,
    r4 object velocity toward the goal, r5/r6 first and second action differences.
    """
    coeffs = coeffs or RewardCoeffs()
    s = -1.0 if SignMode(sign_mode) is SignMode.VERBATIM else 1.0
    a = np.asarray(action, dtype=float)
    v_obj = np.array([world.object_twist.vx, world.object_twist.vy])
    p_obj = world.object_pose.position

    r1 = coeffs.k1 * math.exp(-float(np.linalg.norm(world.robot_pose.position - p_obj)))
    r3 = coeffs.k3 * math.exp(s * float(world.robot_pose.heading @ v_obj))
    r4 = coeffs.k4 * math.exp(s * float((world.goal_pose.position - p_obj) @ v_obj))
    r5 = coeffs.k5 * math.exp(-float(np.linalg.norm(a - state.prev_action)))
    r6 = coeffs.k6 * math.exp(-float(np.linalg.norm(a - 2.0 * state.prev_action + state.prev_prev_action)))
    return r1, r3, r4, r5, r6


def intrinsic_with_switch(components, dist_goal_object: float, state: RewardState,
                          coeffs: Optional[RewardCoeffs] = None, switch_radius: float = 0.2,
                          enabled: bool = True) -> float:
    """Hold the previous intrinsic value while the object is within switch_radius of the goal"""
    coeffs = coeffs or RewardCoeffs()
    if enabled and dist_goal_object < switch_radius:
        return state.prev_intrinsic
    state.prev_intrinsic = coeffs.k7 * float(sum(components))
    return state.prev_intrinsic


def total_reward(intrinsic: float, extrinsic: float) -> float:
    return intrinsic + extrinsic


def evaluate_reward(world: WorldState, action: np.ndarray, state: RewardState,
                    cfg: RewardConfig) -> RewardBreakdown:
    """Full reward at one high-level boundary; advances the action memory in state"""
    comps = intrinsic_components(world, action, state, cfg.coeffs, cfg.sign_mode)
    dist, yaw_err = pose_error(world.object_pose, world.goal_pose)

    frozen = cfg.intrinsic_switch and dist < cfg.switch_radius
    intrinsic = intrinsic_with_switch(comps, dist, state, cfg.coeffs, cfg.switch_radius, cfg.intrinsic_switch)

    if cfg.extrinsic_metric is ExtrinsicMetric.KEY_POINTS:
        dims = world.object.dims
        g_goal = key_points(world.goal_pose, dims, world.robot_pose)
        g_obj = key_points(world.object_pose, dims, world.robot_pose)
        r_ext = extrinsic(g_goal, g_obj, cfg.coeffs, cfg.extrinsic_sign, cfg.log_base)
    else:
        r_ext = extrinsic_pose_error(dist, yaw_err, cfg.coeffs, cfg.extrinsic_sign, cfg.log_base)

    state.advance(action)
    r1, r3, r4, r5, r6 = comps
    return RewardBreakdown(
        r1=r1, r2=r_ext / cfg.coeffs.k8 if cfg.coeffs.k8 else 0.0, r3=r3, r4=r4, r5=r5, r6=r6,
        intrinsic=intrinsic, extrinsic=r_ext,
        total=total_reward(intrinsic, r_ext), frozen=frozen,
    )
