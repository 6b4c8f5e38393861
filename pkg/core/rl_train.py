"""
Hierarchical PPO with concurrent teacher/student adaptation

One iteration = collect horizon x env_count high-level transitions, compute
GAE, then minibatched epochs over PPO plus the adaptation loss.
"""

import asyncio
import json
import logging
import math
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from . import checkpoint
from .agent import Agent, EncoderMode
from .config import PpoConfig, RoaConfig, RunConfig
from .env_gen import Termination
from .environment import PushEnv, StepResult
from .nn import (
    AdamState, adam_step, clip_by_global_norm, gaussian_entropy, gaussian_log_prob, gaussian_sample, squash_action,
)
from .state_obs import ACTION_DIM, HISTORY_LEN, OBS_DIM, PRIV_DIM, STUDENT_STEP_DIM

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.ckpt"
RESUME_FILE = "resume.pkl"


# ----- environments -----

def make_envs(config: RunConfig, count: Optional[int] = None) -> List[PushEnv]:
    """Environment i draws from its own stream seeded seed + i"""
    count = count or config.ppo.env_count
    return [
        PushEnv(config.sim, config.servo, config.ranges, config.task, config.reward,
                seed=config.seed + i, mask_inertial=config.network.mask_inertial)
        for i in range(count)
    ]


async def _step_concurrently(envs: Sequence[PushEnv], actions: np.ndarray, workers: int) -> List[StepResult]:
    semaphore = asyncio.Semaphore(workers)

    async def run(env: PushEnv, action: np.ndarray) -> StepResult:
        async with semaphore:
            return await asyncio.to_thread(env.step, action)

    return await asyncio.gather(*(run(env, a) for env, a in zip(envs, actions)))


def step_envs(envs: Sequence[PushEnv], actions: np.ndarray, workers: int = 1) -> List[StepResult]:
    """Step every env once; results come back in env order whatever the worker count"""
    if workers <= 1:
        return [env.step(a) for env, a in zip(envs, actions)]
    return asyncio.run(_step_concurrently(envs, actions, workers))


# ----- rollout storage -----

@dataclass
class RolloutBuffer:
    """Arrays shaped (T, E, ...), T high-level steps by E environments"""

    obs: np.ndarray
    prev_actions: np.ndarray
    raw_actions: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    l_teacher: np.ndarray
    l_student: np.ndarray
    dones: np.ndarray
    X: np.ndarray
    H: np.ndarray
    last_values: np.ndarray
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @classmethod
    def empty(cls, horizon: int, env_count: int, latent_dim: int) -> "RolloutBuffer":
        T, E = horizon, env_count
        return cls(
            obs=np.zeros((T, E, OBS_DIM)),
            prev_actions=np.zeros((T, E, ACTION_DIM)),
            raw_actions=np.zeros((T, E, ACTION_DIM)),
            actions=np.zeros((T, E, ACTION_DIM)),
            rewards=np.zeros((T, E)),
            values=np.zeros((T, E)),
            log_probs=np.zeros((T, E)),
            l_teacher=np.zeros((T, E, latent_dim)),
            l_student=np.zeros((T, E, latent_dim)),
            dones=np.zeros((T, E)),
            X=np.zeros((T, E, HISTORY_LEN, PRIV_DIM)),
            H=np.zeros((T, E, HISTORY_LEN, STUDENT_STEP_DIM)),
            last_values=np.zeros(E),
        )

    def __len__(self) -> int:
        return self.rewards.size

    def flat(self) -> Dict[str, np.ndarray]:
        n = len(self)
        out = {}
        for name in ("obs", "prev_actions", "raw_actions", "actions", "rewards", "values", "log_probs",
                     "l_teacher", "l_student", "dones", "X", "H", "advantages", "returns"):
            arr = getattr(self, name)
            if arr is not None:
                out[name] = arr.reshape((n,) + arr.shape[2:])
        return out


@dataclass
class RolloutStats:
    episode_returns: List[float] = field(default_factory=list)
    episode_successes: List[bool] = field(default_factory=list)
    faults: int = 0
    physics_ticks: int = 0


def _stack_inputs(envs: Sequence[PushEnv]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    snaps = [env.snapshot() for env in envs]
    X = np.stack([s[0] for s in snaps])
    H = np.stack([s[1] for s in snaps])
    obs = np.stack([env.observation() for env in envs])
    prev = np.stack([env.prev_action for env in envs])
    return X, H, obs, prev


def collect_rollouts(
    envs: Sequence[PushEnv],
    agent: Agent,
    ppo: PpoConfig,
    rng: np.random.Generator,
    workers: int = 1
) -> Tuple[RolloutBuffer, RolloutStats]:
    """
    Run horizon high-level steps in every env with the teacher latent feeding the policy

    Envs that finish (timeout, fault, success) are reset in place; their
    transition is stored with done = 1.
    """
    T, E = ppo.horizon, len(envs)
    buffer = RolloutBuffer.empty(T, E, agent.cfg.latent_dim)
    stats = RolloutStats()

    for t in range(T):
        X, H, obs, prev = _stack_inputs(envs)
        fp = agent.forward(X, H, obs, prev, EncoderMode.TEACHER, need_both=agent.has_encoders)
        raw, log_prob = gaussian_sample(fp.mean, agent.log_std, rng)
        action = squash_action(raw)

        results = step_envs(envs, action, workers)

        buffer.obs[t], buffer.prev_actions[t], buffer.X[t], buffer.H[t] = obs, prev, X, H
        buffer.raw_actions[t], buffer.actions[t] = raw, action
        buffer.values[t], buffer.log_probs[t] = fp.value, log_prob
        if fp.l_teacher is not None:
            buffer.l_teacher[t] = fp.l_teacher
        if fp.l_student is not None:
            buffer.l_student[t] = fp.l_student

        for e, (env, res) in enumerate(zip(envs, results)):
            buffer.rewards[t, e] = res.reward.total
            stats.physics_ticks += res.ticks
            if res.done:
                buffer.dones[t, e] = 1.0
                stats.episode_returns.append(env.episode_return)
                stats.episode_successes.append(res.success)
                stats.faults += int(res.status is Termination.FAULT)
                env.reset()

    X, H, obs, prev = _stack_inputs(envs)
    buffer.last_values = agent.forward(X, H, obs, prev, EncoderMode.TEACHER).value
    return buffer, stats


# ----- losses -----

def gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, lam: float,
        last_value=0.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Generalized advantage estimation along axis 0

    dones[t] = 1 means the episode ended at step t, so nothing bootstraps across it.

    Returns:
        (advantages, returns = advantages + values)
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape):
        raise ValueError("rewards, values and dones must share a shape")

    advantages = np.zeros_like(rewards)
    running = np.zeros_like(rewards[0]) if rewards.ndim > 1 else 0.0
    for t in reversed(range(rewards.shape[0])):
        next_value = last_value if t == rewards.shape[0] - 1 else values[t + 1]
        live = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * live - values[t]
        running = delta + gamma * lam * live * running
        advantages[t] = running
    return advantages, advantages + values


@dataclass
class PpoLoss:
    loss: float
    surrogate: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    d_mean: np.ndarray
    d_log_std: np.ndarray
    d_value: np.ndarray


def ppo_loss(
    raw_actions: np.ndarray,
    old_log_probs: np.ndarray,
    advantages: np.ndarray,
    returns: np.ndarray,
    mean: np.ndarray,
    log_std: np.ndarray,
    values: np.ndarray,
    cfg: PpoConfig
) -> PpoLoss:
    """
    loss = -clipped surrogate + value_coef * 0.5 * MSE(value, return) - entropy_coef * entropy

    Gradients are with respect to the policy mean, log_std and value outputs.
    """
    B = raw_actions.shape[0]
    std_inv2 = np.exp(-2.0 * log_std)
    log_prob = gaussian_log_prob(mean, log_std, raw_actions)
    ratio = np.exp(log_prob - old_log_probs)
    eps = cfg.clip_epsilon

    unclipped = ratio * advantages
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantages
    surrogate = float(np.mean(np.minimum(unclipped, clipped)))
    value_err = values - returns
    value_loss = 0.5 * float(np.mean(value_err ** 2))
    entropy = gaussian_entropy(log_std)
    loss = -surrogate + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    # min() follows the unclipped branch unless clipping makes it strictly smaller
    active = unclipped <= clipped
    d_log_prob = np.where(active, -advantages * ratio, 0.0) / B
    diff = raw_actions - mean
    d_mean = d_log_prob[:, None] * diff * std_inv2
    d_log_std = np.sum(d_log_prob[:, None] * (diff * diff * std_inv2 - 1.0), axis=0) - cfg.entropy_coef
    d_value = cfg.value_coef * value_err / B

    return PpoLoss(
        loss=loss,
        surrogate=surrogate,
        value_loss=value_loss,
        entropy=entropy,
        approx_kl=float(np.mean(old_log_probs - log_prob)),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > eps)),
        d_mean=d_mean,
        d_log_std=d_log_std,
        d_value=d_value,
    )


def roa_loss(l: np.ndarray, l_tilde: np.ndarray, lambda_mult: float, squared: bool = False,
             reg_weight: float = 1.0) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    lambda * ||l~ - sg[l]|| + reg_weight * ||sg[l~] - l||, averaged over the batch

    Returns:
        (loss, d_teacher, d_student): the first term only reaches the student
        latent l~, the second only the teacher latent l
    """
    l = np.asarray(l, dtype=np.float64)
    l_tilde = np.asarray(l_tilde, dtype=np.float64)
    single = l.ndim == 1
    if single:
        l, l_tilde = l[None], l_tilde[None]
    B = l.shape[0]

    diff = l_tilde - l
    norms = np.linalg.norm(diff, axis=1)
    if squared:
        per_row = norms ** 2
        d_norm = 2.0 * diff
    else:
        per_row = norms
        safe = np.where(norms > 0.0, norms, 1.0)
        d_norm = np.where(norms[:, None] > 0.0, diff / safe[:, None], 0.0)

    loss = float(np.mean((lambda_mult + reg_weight) * per_row))
    d_student = lambda_mult * d_norm / B
    d_teacher = -reg_weight * d_norm / B
    if single:
        return loss, d_teacher[0], d_student[0]
    return loss, d_teacher, d_student


# ----- update -----

class UpdateMetrics(BaseModel):
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    roa_loss: float
    latent_gap: float
    explained_variance: float
    grad_norm: float
    skipped_steps: int
    learning_rate: float


def explained_variance(values: np.ndarray, returns: np.ndarray) -> float:
    var = float(np.var(returns))
    if var == 0.0:
        return 0.0
    return 1.0 - float(np.var(returns - values)) / var


def update(
    agent: Agent,
    buffer: RolloutBuffer,
    ppo: PpoConfig,
    roa: RoaConfig,
    adam: AdamState,
    rng: np.random.Generator,
    lambda_mult: Optional[float] = None
) -> UpdateMetrics:
    """
    Minibatched PPO epochs; teacher and student also receive the adaptation loss

    A non-finite loss or gradient skips the minibatch and halves the learning
    rate the first time it happens.
    """
    if buffer.advantages is None:
        raise ValueError("compute advantages before update()")
    lam = roa.lambda_mult if lambda_mult is None else lambda_mult
    use_roa = roa.enabled and agent.has_encoders
    data = buffer.flat()
    n = len(buffer)
    mb = min(ppo.minibatch_size, n)

    sums = {k: 0.0 for k in ("policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction",
                             "roa_loss", "latent_gap", "grad_norm")}
    steps = skipped = 0

    for _ in range(ppo.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            fp = agent.forward(data["X"][idx], data["H"][idx], data["obs"][idx], data["prev_actions"][idx],
                               EncoderMode.TEACHER, need_both=use_roa)
            adv = data["advantages"][idx]
            if ppo.normalize_advantages and len(idx) > 1:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)

            pl = ppo_loss(data["raw_actions"][idx], data["log_probs"][idx], adv, data["returns"][idx],
                          fp.mean, agent.log_std, fp.value, ppo)
            r_loss, d_teacher, d_student, gap = 0.0, None, None, 0.0
            if use_roa:
                r_loss, d_teacher, d_student = roa_loss(fp.l_teacher, fp.l_student, lam, roa.squared)
                gap = float(np.mean(np.linalg.norm(fp.l_student - fp.l_teacher, axis=1)))

            total = pl.loss + r_loss
            grads = agent.backward(fp, pl.d_mean, pl.d_value, d_teacher, d_student)
            grads["policy.log_std"] = grads["policy.log_std"] + pl.d_log_std
            finite = math.isfinite(total) and all(np.all(np.isfinite(g)) for g in grads.values())
            if not finite:
                skipped += 1
                if not adam.lr_halved:
                    adam.lr *= 0.5
                    adam.lr_halved = True
                logger.warning(f"✗ Non-finite loss, step skipped (lr now {adam.lr:g})")
                continue

            grads, norm = clip_by_global_norm(grads, ppo.max_grad_norm)
            adam_step(agent.params, grads, adam)

            steps += 1
            sums["policy_loss"] += -pl.surrogate
            sums["value_loss"] += pl.value_loss
            sums["entropy"] += pl.entropy
            sums["approx_kl"] += pl.approx_kl
            sums["clip_fraction"] += pl.clip_fraction
            sums["roa_loss"] += r_loss
            sums["latent_gap"] += gap
            sums["grad_norm"] += norm

    means = {k: (v / steps if steps else 0.0) for k, v in sums.items()}
    return UpdateMetrics(
        **means,
        explained_variance=explained_variance(data["values"], data["returns"]),
        skipped_steps=skipped,
        learning_rate=adam.lr,
    )


# ----- training loop -----

class MetricsRecord(BaseModel):
    """One line of metrics.jsonl; no wall-clock fields so logs are reproducible"""

    iteration: int
    mean_reward: float
    mean_return: Optional[float]
    success_fraction: Optional[float]
    episodes: int
    faults: int
    lambda_mult: float
    policy_loss: float
    value_loss: float
    entropy: float
    approx_kl: float
    clip_fraction: float
    roa_loss: float
    latent_gap: float
    explained_variance: float
    grad_norm: float
    skipped_steps: int
    learning_rate: float


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    records: List[MetricsRecord]


class Trainer:
    """Owns the agent, optimizer, envs and RNG of one training run"""

    def __init__(self, config: RunConfig, out_dir=None):
        self.config = config
        self.out_dir = Path(out_dir or config.paths.out_dir)
        self.agent = Agent(config.network)
        self.adam = AdamState(lr=config.ppo.learning_rate)
        self.rng = np.random.default_rng([config.seed, 1])
        self.envs = make_envs(config)
        for env in self.envs:
            env.reset()
        self.iteration = 0

    @property
    def checkpoint_path(self) -> Path:
        return self.out_dir / CHECKPOINT_FILE

    @property
    def metrics_path(self) -> Path:
        return self.out_dir / METRICS_FILE

    def run_iteration(self) -> MetricsRecord:
        cfg = self.config
        lam = cfg.roa.lambda_at(self.iteration, cfg.ppo.iterations)

        buffer, stats = collect_rollouts(self.envs, self.agent, cfg.ppo, self.rng, cfg.workers)
        buffer.advantages, buffer.returns = gae(buffer.rewards, buffer.values, buffer.dones,
                                                cfg.ppo.gamma, cfg.ppo.gae_lambda, buffer.last_values)
        metrics = update(self.agent, buffer, cfg.ppo, cfg.roa, self.adam, self.rng, lam)

        episodes = len(stats.episode_returns)
        record = MetricsRecord(
            iteration=self.iteration,
            mean_reward=float(np.mean(buffer.rewards)),
            mean_return=float(np.mean(stats.episode_returns)) if episodes else None,
            success_fraction=float(np.mean(stats.episode_successes)) if episodes else None,
            episodes=episodes,
            faults=stats.faults,
            lambda_mult=lam,
            **metrics.model_dump(),
        )
        self.iteration += 1
        return record

    def train(self, iterations: Optional[int] = None) -> TrainResult:
        """Run until `iterations` (default: ppo.iterations) have completed in total"""
        total = iterations if iterations is not None else self.config.ppo.iterations
        self.out_dir.mkdir(parents=True, exist_ok=True)
        records = []

        logger.info(f"→ Training {self.config.ablation.value} from iteration {self.iteration} to {total} "
                    f"({len(self.envs)} envs, horizon {self.config.ppo.horizon})")
        while self.iteration < total:
            record = self.run_iteration()
            records.append(record)
            with self.metrics_path.open("a", encoding="utf-8") as fh:
                fh.write(record.model_dump_json() + "\n")
            logger.info(f"✓ Iteration {record.iteration}: reward {record.mean_reward:.3f}, "
                        f"episodes {record.episodes}, latent gap {record.latent_gap:.4f}")
            if self.iteration % self.config.ppo.checkpoint_every == 0 or self.iteration == total:
                self.save()

        return TrainResult(self.checkpoint_path, self.metrics_path, records)

    def save(self) -> Path:
        metadata = {
            "config": json.loads(self.config.model_dump_json()),
            "iteration": self.iteration,
        }
        checkpoint.save(self.checkpoint_path, self.agent.params, self.agent.signature(), metadata)
        state = {
            "iteration": self.iteration,
            "params": dict(self.agent.params.items()),
            "params_version": self.agent.params.version,
            "adam": self.adam,
            "rng": self.rng.bit_generator.state,
            "envs": self.envs,
        }
        resume_path = self.out_dir / RESUME_FILE
        with resume_path.open("wb") as fh:
            pickle.dump(state, fh)
        return self.checkpoint_path

    @classmethod
    def resume(cls, out_dir, config: Optional[RunConfig] = None) -> "Trainer":
        """Rebuild a trainer from resume.pkl so the next iteration matches an uninterrupted run"""
        out_dir = Path(out_dir)
        if config is None:
            _, metadata, _, _ = checkpoint.read_header(out_dir / CHECKPOINT_FILE)
            config = RunConfig.model_validate(metadata["config"])
        with (out_dir / RESUME_FILE).open("rb") as fh:
            state = pickle.load(fh)

        trainer = cls.__new__(cls)
        trainer.config = config
        trainer.out_dir = out_dir
        trainer.agent = Agent(config.network)
        for name, value in state["params"].items():
            trainer.agent.params[name] = value
        trainer.agent.params.version = state["params_version"]
        trainer.adam = state["adam"]
        trainer.rng = np.random.default_rng()
        trainer.rng.bit_generator.state = state["rng"]
        trainer.envs = state["envs"]
        trainer.iteration = state["iteration"]
        logger.info(f"→ Resumed {out_dir} at iteration {trainer.iteration}")
        return trainer


def train(config: RunConfig, out_dir=None) -> TrainResult:
    return Trainer(config, out_dir).train()
