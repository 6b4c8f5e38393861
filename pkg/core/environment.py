"""One push environment: world, task, history rings and reward state behind a step() call"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np

from . import physics
from .env_gen import (
    RandomizationRanges, TaskConfig, TaskSpec, Termination,
    drift_com, initial_world, sample_object, sample_task, terminate,
)
from .errors import InvalidStateError
from .physics import ObjectSpec, ServoModel, SimConfig, Twist2, WorldState
from .rewards import RewardBreakdown, RewardConfig, RewardState, evaluate_reward
from .state_obs import (
    ACTION_DIM, HistoryBuffers, build_observation, build_privileged, push_history, snapshot, success,
)

logger = logging.getLogger(__name__)

TickHook = Callable[[WorldState], WorldState]
TickObserver = Callable[[WorldState], None]
TaskFactory = Callable[[np.random.Generator, ObjectSpec], TaskSpec]


@dataclass(frozen=True)
class StepResult:
    reward: RewardBreakdown
    status: Termination
    success: bool
    ticks: int

    @property
    def done(self) -> bool:
        return self.success or self.status is not Termination.RUNNING


class PushEnv:
    """
    Single environment stepped at the high-level rate

    Every step() applies one action for sim.substeps physics ticks, pushing the
    pre-tick observation and privileged vector into the history rings each tick,
    and evaluates the reward once on the post-tick state.
    """

    def __init__(
        self,
        sim: SimConfig,
        servo: ServoModel,
        ranges: RandomizationRanges,
        task_cfg: TaskConfig,
        reward_cfg: RewardConfig,
        seed: int,
        mask_inertial: bool = False
    ):
        self.sim = sim
        self.servo = servo
        self.ranges = ranges
        self.task_cfg = task_cfg
        self.reward_cfg = reward_cfg
        self.seed = seed
        self.mask_inertial = mask_inertial
        self.rng = np.random.default_rng(seed)

        self.world: Optional[WorldState] = None
        self.task: Optional[TaskSpec] = None
        self.history = HistoryBuffers()
        self.reward_state = RewardState()
        self.episode_return = 0.0
        self.episode_steps = 0

    def reset(self, task_factory: Optional[TaskFactory] = None) -> WorldState:
        """Fresh object and task; task_factory overrides the random task sampler"""
        obj = sample_object(self.ranges, self.rng)
        if task_factory is None:
            task = sample_task(self.rng, obj, self.sim.robot_dims, self.task_cfg)
        else:
            task = task_factory(self.rng, obj)
        return self.reset_to(initial_world(obj, task), task)

    def reset_to(self, world: WorldState, task: TaskSpec) -> WorldState:
        self.world = world
        self.task = task
        self.history = HistoryBuffers()
        self.reward_state = RewardState()
        self.episode_return = 0.0
        self.episode_steps = 0
        return world

    def observation(self) -> np.ndarray:
        return build_observation(self.world, self.sim.robot_dims)

    def privileged(self) -> np.ndarray:
        return build_privileged(self.world.object, self.world.in_contact, self.mask_inertial)

    def snapshot(self) -> Tuple[np.ndarray, np.ndarray]:
        return snapshot(self.history)

    @property
    def prev_action(self) -> np.ndarray:
        return self.history.latest_action.copy()

    def step(
        self,
        action: np.ndarray,
        before_tick: Optional[TickHook] = None,
        after_tick: Optional[TickObserver] = None
    ) -> StepResult:
        """
        Apply one high-level action

        Args:
            action: (vx, vy, wz) command inside the action bounds
            before_tick: May replace the world before each physics tick
            after_tick: Sees the world after each physics tick

        Returns:
            Reward breakdown, termination status and training success flag
        """
        if self.world is None:
            raise InvalidStateError("step() called before reset()")
        action = np.asarray(action, dtype=float).reshape(-1)
        if action.shape[0] != ACTION_DIM or not np.all(np.isfinite(action)):
            raise InvalidStateError(f"Action must be {ACTION_DIM} finite values, got {action}")

        if self.task_cfg.com_drift_std > 0:
            drifted = drift_com(self.world.object, self.task_cfg.com_drift_std, self.sim.high_level_dt,
                                self.ranges.com_volume_pct[1], self.rng)
            self.world = replace(self.world, object=drifted)

        push_history(self.history, a=action)
        command = Twist2.from_array(action)
        for _ in range(self.sim.substeps):
            if before_tick is not None:
                self.world = before_tick(self.world)
            push_history(self.history, o=self.observation(), x=self.privileged())
            self.world = physics.step(self.world, command, self.servo, self.sim, self.rng)
            if after_tick is not None:
                after_tick(self.world)

        reward = evaluate_reward(self.world, action, self.reward_state, self.reward_cfg)
        status = terminate(self.world, self.task)
        reached = success(self.world.object_pose, self.world.goal_pose,
                          self.task_cfg.success_distance, self.task_cfg.success_yaw_deg)
        self.episode_return += reward.total
        self.episode_steps += 1
        if status is Termination.FAULT:
            logger.warning(f"✗ Object left the workspace (env seed {self.seed}, t={self.world.sim_time:.2f}s)")
        return StepResult(reward=reward, status=status, success=reached, ticks=self.sim.substeps)
