"""Evaluation harness: success-rate protocols, ablation runs and trajectory replay"""

import asyncio
import json
import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from . import checkpoint
from .agent import Agent, EncoderMode, NetworkConfig
from .config import Ablation, EvalProtocol, RunConfig, apply_ablation
from .env_gen import Termination, orientation_task
from .environment import PushEnv
from .nn import squash_action
from .physics import ACTION_LIMIT, Twist2, WorldState
from .rl_train import Trainer
from .state_obs import pose_error, success

logger = logging.getLogger(__name__)


# ----- controllers -----

class Controller:
    """Chooses one high-level action per step; may also edit the world before each tick"""

    name = "controller"

    def act(self, env: PushEnv) -> np.ndarray:
        raise NotImplementedError

    def intervene(self, world: WorldState) -> WorldState:
        return world

    def latent_norm(self) -> Optional[float]:
        return None


class PolicyController(Controller):
    """Deterministic policy mean through the student or expert (teacher) encoder"""

    name = "policy"

    def __init__(self, agent: Agent, mode: EncoderMode = EncoderMode.STUDENT):
        self.agent = agent
        self.mode = EncoderMode(mode)
        self._latent_norm: Optional[float] = None

    def act(self, env: PushEnv) -> np.ndarray:
        X, H = env.snapshot()
        fp = self.agent.act_deterministic(X, H, env.observation(), env.prev_action, self.mode)
        latent = fp.l_student if fp.l_student is not None else fp.l_teacher
        self._latent_norm = float(np.linalg.norm(latent[0])) if latent is not None else None
        return squash_action(fp.mean[0])

    def latent_norm(self) -> Optional[float]:
        return self._latent_norm


class RandomController(Controller):
    name = "random"

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def act(self, env: PushEnv) -> np.ndarray:
        return self.rng.uniform(-ACTION_LIMIT, ACTION_LIMIT, size=3)


class ZeroController(Controller):
    name = "zero"

    def act(self, env: PushEnv) -> np.ndarray:
        return np.zeros(3)


class TeleportOracle(ZeroController):
    """Harness self-test: places the object on the goal at a fixed time"""

    name = "teleport"

    def __init__(self, at_time: float = 1.0):
        self.at_time = at_time

    def intervene(self, world: WorldState) -> WorldState:
        if world.sim_time >= self.at_time - 1e-9 and world.object_pose != world.goal_pose:
            return replace(world, object_pose=world.goal_pose, object_twist=Twist2())
        return world


ControllerFactory = Callable[[int], Controller]


# ----- report -----

class CriterionResult(BaseModel):
    distance: float
    yaw_deg: float
    successes: int
    success_rate: float
    mean_time: Optional[float]
    final_success_rate: float


class EpisodeRecord(BaseModel):
    index: int
    seed: int
    outcome: str
    first_success_times: List[Optional[float]]
    final_success: List[bool]
    final_distance: float
    final_yaw_deg: float
    duration: float
    yaw_offset_deg: Optional[float] = None


class EvalReport(BaseModel):
    controller: str
    encoder: Optional[str]
    protocol: str
    ablation: str
    episodes: int
    criteria: List[CriterionResult]
    records: List[EpisodeRecord]

    def rate(self, distance: float, yaw_deg: float) -> float:
        for c in self.criteria:
            if math.isclose(c.distance, distance) and math.isclose(c.yaw_deg, yaw_deg):
                return c.success_rate
        raise KeyError((distance, yaw_deg))


# ----- episodes -----

def _make_env(config: RunConfig, seed: int) -> PushEnv:
    return PushEnv(config.sim, config.servo, config.eval.eval_ranges(), config.task, config.reward,
                   seed=seed, mask_inertial=config.network.mask_inertial)


def run_episode(env: PushEnv, controller: Controller, criteria: Sequence[Tuple[float, float]], index: int,
                stop_on_success: bool = False, yaw_offset_deg: Optional[float] = None) -> EpisodeRecord:
    """
    Roll one reset env to termination, checking every criterion at each physics tick

    A criterion's time is the sim time of the first tick state that satisfies it.
    """
    first: List[Optional[float]] = [None] * len(criteria)

    def check(world: WorldState) -> None:
        for k, (d_tol, theta_tol) in enumerate(criteria):
            if first[k] is None and success(world.object_pose, world.goal_pose, d_tol, theta_tol):
                first[k] = world.sim_time

    def before_tick(world: WorldState) -> WorldState:
        world = controller.intervene(world)
        check(world)
        return world

    status = Termination.RUNNING
    while status is Termination.RUNNING:
        result = env.step(controller.act(env), before_tick=before_tick)
        status = result.status
        if stop_on_success and all(t is not None for t in first):
            break

    world = env.world
    check(world)
    dist, yaw_err = pose_error(world.object_pose, world.goal_pose)
    final = [success(world.object_pose, world.goal_pose, d, th) for d, th in criteria]
    if first[0] is not None:
        outcome = "success"
    else:
        outcome = status.value if status is not Termination.RUNNING else "stopped"
    return EpisodeRecord(
        index=index,
        seed=env.seed,
        outcome=outcome,
        first_success_times=first,
        final_success=final,
        final_distance=dist,
        final_yaw_deg=math.degrees(yaw_err),
        duration=world.sim_time,
        yaw_offset_deg=yaw_offset_deg,
    )


def _episode_plan(config: RunConfig, n_episodes: int) -> List[Tuple[int, int, Optional[float]]]:
    """(index, env seed, yaw offset) per episode"""
    ev = config.eval
    if ev.protocol is EvalProtocol.ORIENTATION:
        plan = []
        for yaw in ev.orientation_yaws_deg:
            for _ in range(ev.orientation_trials):
                plan.append((len(plan), ev.seed + len(plan), yaw))
        return plan
    return [(k, ev.seed + k, None) for k in range(n_episodes)]


def _run_planned(config: RunConfig, factory: ControllerFactory, criteria, entry) -> EpisodeRecord:
    index, seed, yaw = entry
    env = _make_env(config, seed)
    if yaw is None:
        env.reset()
    else:
        env.reset(lambda rng, obj: orientation_task(rng, obj, config.sim.robot_dims, yaw, config.task))
    return run_episode(env, factory(seed), criteria, index, config.eval.stop_on_success, yaw)


async def _run_concurrently(config, factory, criteria, plan, workers: int) -> List[EpisodeRecord]:
    semaphore = asyncio.Semaphore(workers)

    async def one(entry):
        async with semaphore:
            return await asyncio.to_thread(_run_planned, config, factory, criteria, entry)

    return await asyncio.gather(*(one(entry) for entry in plan))


def summarize(records: List[EpisodeRecord], criteria: Sequence[Tuple[float, float]]) -> List[CriterionResult]:
    n = len(records)
    out = []
    for k, (d_tol, theta_tol) in enumerate(criteria):
        times = [r.first_success_times[k] for r in records if r.first_success_times[k] is not None]
        finals = sum(1 for r in records if r.final_success[k])
        out.append(CriterionResult(
            distance=d_tol,
            yaw_deg=theta_tol,
            successes=len(times),
            success_rate=100.0 * len(times) / n if n else 0.0,
            mean_time=float(np.mean(times)) if times else None,
            final_success_rate=100.0 * finals / n if n else 0.0,
        ))
    return out


def evaluate(
    config: RunConfig,
    factory: ControllerFactory,
    n_episodes: Optional[int] = None,
    criteria: Optional[Sequence[Tuple[float, float]]] = None,
    controller_name: str = "policy",
    encoder: Optional[EncoderMode] = None
) -> EvalReport:
    """
    Run the seeded episode suite

    Args:
        config: Run config; config.eval selects protocol, ranges, seeds and workers
        factory: Builds a controller for an episode seed
        n_episodes: Random protocol episode count (default config.eval.episodes)
        criteria: (distance m, yaw deg) list (default from config.eval)

    Returns:
        EvalReport with records in episode order
    """
    criteria = list(criteria) if criteria is not None else config.eval.protocol_criteria()
    if not criteria:
        raise ValueError("criteria must not be empty")
    plan = _episode_plan(config, n_episodes or config.eval.episodes)

    logger.info(f"→ Evaluating {controller_name} on {len(plan)} episodes ({config.eval.protocol.value})")
    if config.workers <= 1:
        records = [_run_planned(config, factory, criteria, entry) for entry in plan]
    else:
        records = asyncio.run(_run_concurrently(config, factory, criteria, plan, config.workers))

    report = EvalReport(
        controller=controller_name,
        encoder=encoder.value if encoder is not None else None,
        protocol=config.eval.protocol.value,
        ablation=config.ablation.value,
        episodes=len(records),
        criteria=summarize(records, criteria),
        records=records,
    )
    for c in report.criteria:
        logger.info(f"✓ ({c.distance} m, {c.yaw_deg}°): {c.success_rate:.1f}% "
                    f"(final {c.final_success_rate:.1f}%)")
    return report


def load_agent(path, config: Optional[RunConfig] = None) -> Tuple[Agent, RunConfig]:
    """Checkpoint plus the run config stored in its metadata; layout mismatches raise"""
    _, metadata, _, _ = checkpoint.read_header(path)
    stored = RunConfig.model_validate(metadata["config"]) if "config" in metadata else None
    config = config or stored or RunConfig()
    network: NetworkConfig = stored.network if stored is not None else config.network
    params, _ = checkpoint.load(path, network.signature())
    return Agent(network, params), config


def evaluate_checkpoint(path, config: Optional[RunConfig] = None, n_episodes: Optional[int] = None,
                        criteria=None, encoder: Optional[EncoderMode] = None) -> EvalReport:
    agent, config = load_agent(path, config)
    mode = EncoderMode(encoder or config.eval.encoder)
    return evaluate(config, lambda seed: PolicyController(agent, mode), n_episodes, criteria,
                    controller_name="policy", encoder=mode)


def run_ablation(config: RunConfig, ablation: Optional[Ablation] = None, out_dir=None,
                 base_checkpoint=None) -> Tuple[Path, RunConfig]:
    """
    Train with one ablation applied

    The expert ablation only swaps the deployment encoder, so it reuses
    base_checkpoint when one is given; without one it trains the unablated
    model into out_dir.

    Returns:
        (checkpoint path, effective config)
    """
    effective = apply_ablation(config, ablation)
    out = Path(out_dir or Path(config.paths.out_dir) / effective.ablation.value)
    if effective.ablation is Ablation.EXPERT:
        if base_checkpoint is not None:
            logger.info(f"→ Ablation expert reuses {base_checkpoint}")
            return Path(base_checkpoint), effective
        trained = apply_ablation(config, Ablation.NONE)
    else:
        trained = effective
    logger.info(f"→ Ablation {effective.ablation.value} → {out}")
    result = Trainer(trained, out).train()
    return result.checkpoint, effective


# ----- replay -----

class TrajectoryRecord(BaseModel):
    time: float
    robot_pose: Tuple[float, float, float]
    robot_twist: Tuple[float, float, float]
    object_pose: Tuple[float, float, float]
    object_twist: Tuple[float, float, float]
    command: Tuple[float, float, float]
    reward: Optional[float]
    intrinsic: Optional[float]
    extrinsic: Optional[float]
    latent_norm: Optional[float]
    position_error: float
    yaw_error_deg: float
    in_contact: bool


def replay(config: RunConfig, controller: Controller, task_seed: int, out_path,
           seconds: Optional[float] = None) -> int:
    """
    Write one JSON line per physics tick for a single seeded episode

    Returns:
        Number of records written
    """
    env = _make_env(config, task_seed)
    env.reset()
    limit = seconds if seconds is not None else env.task.time_limit
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    lines: List[str] = []
    pending: List[TrajectoryRecord] = []
    command = np.zeros(3)

    def record(world: WorldState) -> None:
        if world.sim_time > limit + 1e-9:
            return
        dist, yaw_err = pose_error(world.object_pose, world.goal_pose)
        pending.append(TrajectoryRecord(
            time=world.sim_time,
            robot_pose=(world.robot_pose.x, world.robot_pose.y, world.robot_pose.yaw),
            robot_twist=tuple(world.robot_twist.as_array()),
            object_pose=(world.object_pose.x, world.object_pose.y, world.object_pose.yaw),
            object_twist=tuple(world.object_twist.as_array()),
            command=tuple(float(c) for c in command),
            reward=None,
            intrinsic=None,
            extrinsic=None,
            latent_norm=controller.latent_norm(),
            position_error=dist,
            yaw_error_deg=math.degrees(yaw_err),
            in_contact=world.in_contact,
        ))

    status = Termination.RUNNING
    while status is Termination.RUNNING and env.world.sim_time < limit - 1e-9:
        command = controller.act(env)
        result = env.step(command, before_tick=controller.intervene, after_tick=record)
        # the ticks of a high-level step carry the reward that step earned
        terms = {"reward": result.reward.total, "intrinsic": result.reward.intrinsic,
                 "extrinsic": result.reward.extrinsic}
        lines.extend(rec.model_copy(update=terms).model_dump_json() for rec in pending)
        pending.clear()
        status = result.status

    out_path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    logger.info(f"✓ Replay written: {out_path} ({len(lines)} records)")
    return len(lines)


def report_json(report: EvalReport) -> str:
    return json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2)
