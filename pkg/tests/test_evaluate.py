import json
import math
from dataclasses import replace

import numpy as np
import pytest

from core.agent import EncoderMode
from core.config import Ablation, EvalProtocol
from core.environment import PushEnv
from core.evaluate import (
    RandomController, TeleportOracle, ZeroController,
    evaluate, evaluate_checkpoint, replay, report_json, run_ablation,
)
from core.physics import Pose2, Twist2
from core.rl_train import Trainer
from presets.tables import DEFAULT_CRITERIA


class NearGoalOracle(ZeroController):
    """Pins the object 4 cm and 7 degrees off the goal from t = 1 s"""

    name = "near_goal"

    def intervene(self, world):
        if world.sim_time < 1.0 - 1e-9:
            return world
        goal = world.goal_pose
        target = Pose2(goal.x + 0.04, goal.y, goal.yaw + math.radians(7.0))
        return replace(world, object_pose=target, object_twist=Twist2())


def _eval_config(config, **eval_fields):
    return config.model_copy(update={"eval": config.eval.model_copy(update=eval_fields)})


def test_teleport_oracle_succeeds_at_one_second(smoke_config):
    report = evaluate(smoke_config, lambda seed: TeleportOracle(1.0), n_episodes=4, controller_name="teleport")
    assert report.episodes == 4
    for c in report.criteria:
        assert c.success_rate == 100.0
        assert c.mean_time == pytest.approx(1.0, abs=1e-6)
    assert [r.index for r in report.records] == [0, 1, 2, 3]
    assert all(r.outcome == "success" for r in report.records)


def test_zero_controller_never_succeeds(smoke_config):
    report = evaluate(smoke_config, lambda seed: ZeroController(), n_episodes=4, controller_name="zero")
    assert all(c.success_rate == 0.0 and c.mean_time is None for c in report.criteria)
    assert all(r.outcome == "timeout" for r in report.records)
    assert all(r.duration == pytest.approx(smoke_config.task.time_limit) for r in report.records)


def test_criteria_nest(smoke_config):
    report = evaluate(smoke_config, lambda seed: NearGoalOracle(), n_episodes=3)
    assert [(c.distance, c.yaw_deg) for c in report.criteria] == list(DEFAULT_CRITERIA)
    assert [c.success_rate for c in report.criteria] == [0.0, 100.0, 100.0, 100.0, 0.0]
    assert report.rate(0.05, 5.0) <= report.rate(0.05, 10.0) <= report.rate(0.05, 15.0)
    assert report.rate(0.03, 5.0) <= report.rate(0.05, 5.0)
    assert report.rate(0.05, 10.0) <= report.rate(0.1, 10.0)
    with pytest.raises(KeyError):
        report.rate(0.2, 20.0)


def test_empty_criteria_rejected(smoke_config):
    with pytest.raises(ValueError):
        evaluate(smoke_config, lambda seed: ZeroController(), n_episodes=1, criteria=[])


def test_orientation_protocol(smoke_config):
    config = _eval_config(smoke_config, protocol=EvalProtocol.ORIENTATION, orientation_trials=1)
    report = evaluate(config, lambda seed: TeleportOracle(1.0))
    assert report.protocol == "orientation"
    assert [r.yaw_offset_deg for r in report.records] == [45.0, 90.0, 180.0]
    assert [(c.distance, c.yaw_deg) for c in report.criteria] == [(0.05, 10.0)]
    assert report.criteria[0].success_rate == 100.0


def test_workers_do_not_change_results(smoke_config):
    serial = evaluate(smoke_config, lambda seed: RandomController(seed), n_episodes=3)
    parallel = evaluate(smoke_config.model_copy(update={"workers": 3}), lambda seed: RandomController(seed),
                        n_episodes=3)
    assert serial == parallel


def test_replay_writes_one_record_per_tick(smoke_config, tmp_path):
    a = tmp_path / "a.jsonl"
    b = tmp_path / "b.jsonl"
    assert replay(smoke_config, RandomController(3), 7, a, seconds=1.0) == 100
    assert replay(smoke_config, RandomController(3), 7, b, seconds=1.0) == 100
    assert a.read_bytes() == b.read_bytes()

    rows = [json.loads(line) for line in a.read_text(encoding="utf-8").splitlines()]
    assert len(rows) == 100
    assert rows[0]["time"] == pytest.approx(0.01)
    assert rows[-1]["time"] == pytest.approx(1.0)
    assert all(np.all(np.abs(r["command"]) <= 1.5) for r in rows)


def test_replay_ticks_carry_their_own_step_reward(smoke_config, tmp_path):
    path = tmp_path / "replay.jsonl"
    replay(smoke_config, RandomController(3), 7, path, seconds=1.0)
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]

    env = PushEnv(smoke_config.sim, smoke_config.servo, smoke_config.eval.eval_ranges(), smoke_config.task,
                  smoke_config.reward, seed=7)
    env.reset()
    controller = RandomController(3)
    substeps = smoke_config.sim.substeps
    for k in range(len(rows) // substeps):
        result = env.step(controller.act(env))
        block = rows[k * substeps:(k + 1) * substeps]
        assert {r["reward"] for r in block} == {result.reward.total}
        assert {r["extrinsic"] for r in block} == {result.reward.extrinsic}
        assert {r["intrinsic"] for r in block} == {result.reward.intrinsic}


def test_evaluate_checkpoint_uses_student(smoke_config, tmp_path):
    result = Trainer(smoke_config, tmp_path / "run").train(iterations=1)
    report = evaluate_checkpoint(result.checkpoint, n_episodes=2)
    assert report.encoder == "student"
    assert report.episodes == 2
    assert len(report.records[0].first_success_times) == len(DEFAULT_CRITERIA)

    expert = evaluate_checkpoint(result.checkpoint, n_episodes=1, encoder=EncoderMode.EXPERT)
    assert expert.encoder == "expert"
    assert json.loads(report_json(report))["episodes"] == 2


def test_run_ablation_trains_with_the_ablation_applied(smoke_config, tmp_path):
    config = smoke_config.model_copy(update={"ppo": smoke_config.ppo.model_copy(update={"iterations": 1})})
    ckpt, effective = run_ablation(config, Ablation.NO_INTRINSIC_SWITCH, tmp_path / "ablation")
    assert ckpt.exists()
    assert effective.ablation is Ablation.NO_INTRINSIC_SWITCH
    assert effective.reward.intrinsic_switch is False
    assert config.reward.intrinsic_switch is True


def test_expert_ablation_reuses_the_base_checkpoint(smoke_config, tmp_path):
    config = smoke_config.model_copy(update={"ppo": smoke_config.ppo.model_copy(update={"iterations": 1})})
    base, _ = run_ablation(config, Ablation.NONE, tmp_path / "none")

    ckpt, effective = run_ablation(config, Ablation.EXPERT, tmp_path / "expert", base_checkpoint=base)
    assert ckpt == base
    assert not (tmp_path / "expert").exists()
    assert effective.eval.encoder is EncoderMode.EXPERT

    report = evaluate_checkpoint(ckpt, effective, n_episodes=1, encoder=effective.eval.encoder)
    assert report.encoder == "expert"
    assert report.ablation == "expert"
