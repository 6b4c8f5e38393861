import copy

import numpy as np
import pytest

from core.environment import PushEnv
from core.errors import InvalidStateError
from core.rewards import evaluate_reward
from core.rl_train import Trainer, collect_rollouts
from core.state_obs import HISTORY_LEN, OBS_DIM, build_observation

ACTIONS = [
    np.array([0.5, 0.0, 0.0]),
    np.array([0.2, 0.1, -0.3]),
    np.array([-0.4, 0.3, 0.1]),
]


@pytest.fixture
def env(smoke_config):
    env = PushEnv(smoke_config.sim, smoke_config.servo, smoke_config.ranges, smoke_config.task,
                  smoke_config.reward, seed=5)
    env.reset()
    return env


def test_step_before_reset_is_rejected(smoke_config):
    env = PushEnv(smoke_config.sim, smoke_config.servo, smoke_config.ranges, smoke_config.task,
                  smoke_config.reward, seed=5)
    with pytest.raises(InvalidStateError):
        env.step(np.zeros(3))


def test_histories_advance_per_tick_and_actions_per_step(env, smoke_config):
    substeps = smoke_config.sim.substeps
    assert substeps == HISTORY_LEN

    for k, action in enumerate(ACTIONS, start=1):
        pre_obs, pre_priv = env.observation(), env.privileged()
        post_tick = []
        env.step(action, after_tick=lambda w: post_tick.append(build_observation(w, smoke_config.sim.robot_dims)))
        h = env.history

        assert h.action_pushes == k
        assert h.physics_pushes == k * substeps
        # row 0 is the state before the first tick, row i the state after tick i
        np.testing.assert_array_equal(h.observations[0], pre_obs)
        np.testing.assert_array_equal(h.privileged[0], pre_priv)
        np.testing.assert_array_equal(h.observations[1:], np.array(post_tick[:-1]))
        np.testing.assert_array_equal(env.observation(), post_tick[-1])
        # every row of this step is paired with the action just applied
        np.testing.assert_array_equal(h.paired_actions, np.tile(action, (substeps, 1)))

    np.testing.assert_array_equal(env.history.actions[-3:], np.array(ACTIONS))
    assert not env.history.actions[:-3].any()
    np.testing.assert_array_equal(env.prev_action, ACTIONS[-1])


def test_snapshot_precedes_the_action(env):
    env.step(ACTIONS[0])
    X, H = env.snapshot()
    env.step(ACTIONS[1])

    np.testing.assert_array_equal(H[:, OBS_DIM:], np.tile(ACTIONS[0], (HISTORY_LEN, 1)))
    X_next, H_next = env.snapshot()
    np.testing.assert_array_equal(H_next[:, OBS_DIM:], np.tile(ACTIONS[1], (HISTORY_LEN, 1)))
    assert not np.array_equal(X, X_next) or not np.array_equal(H, H_next)


def test_reward_is_evaluated_once_at_each_boundary(env, smoke_config):
    totals = []
    for action in ACTIONS:
        state = copy.deepcopy(env.reward_state)
        result = env.step(action)
        assert result.reward == evaluate_reward(env.world, action, state, smoke_config.reward)
        assert result.ticks == smoke_config.sim.substeps
        totals.append(result.reward.total)

    assert env.episode_steps == 3
    assert env.episode_return == sum(totals)


def test_rollout_rewards_match_stepping_by_hand(smoke_config, tmp_path):
    # 12 steps cross the 10-step episode limit, so resets are exercised too
    ppo = smoke_config.ppo.model_copy(update={"horizon": 12})
    trainer = Trainer(smoke_config, tmp_path / "run")
    clones = copy.deepcopy(trainer.envs)
    buffer, stats = collect_rollouts(trainer.envs, trainer.agent, ppo, trainer.rng)

    returns = []
    for t in range(ppo.horizon):
        for e, clone in enumerate(clones):
            X, H = clone.snapshot()
            np.testing.assert_array_equal(buffer.X[t, e], X)
            np.testing.assert_array_equal(buffer.H[t, e], H)
            np.testing.assert_array_equal(buffer.prev_actions[t, e], clone.prev_action)

            result = clone.step(buffer.actions[t, e])
            assert buffer.rewards[t, e] == result.reward.total
            assert buffer.dones[t, e] == float(result.done)
            if result.done:
                returns.append(clone.episode_return)
                clone.reset()

    assert sorted(returns) == sorted(stats.episode_returns)
    assert buffer.dones.any()
