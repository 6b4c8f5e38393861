from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from core.agent import Agent, EncoderKind, EncoderMode, NetworkConfig
from core.config import (
    Ablation, EvalConfig, EvalProtocol, PathsConfig, RoaConfig, RoaSchedule, RunConfig, RunMode,
    apply_ablation, load_config, with_overrides,
)
from core.env_gen import RandomizationRanges, RangeMode
from core.rewards import ExtrinsicMetric, SignMode
from core.state_obs import PRIV_DIM, PRIV_SLICES, inertial_mask
from presets.tables import ABLATIONS, ORIENTATION_PROTOCOL_YAWS_DEG, get_ablation_description, get_ablation_name

ROOT = Path(__file__).resolve().parent.parent

TINY = NetworkConfig(policy_hidden=[16], value_hidden=[16], lstm_hidden=8, mlp_encoder_hidden=[16], latent_dim=8)


def _tiny_config(**fields) -> RunConfig:
    return RunConfig(network=TINY, **fields)


def test_shipped_configs_validate():
    desk = load_config(ROOT / "configs" / "desk_scale.json")
    assert desk.reward.sign_mode is SignMode.NEGATED
    assert desk.eval.range_mode is RangeMode.TEST
    smoke = load_config(ROOT / "configs" / "smoke.json")
    assert smoke.ppo.iterations == 2


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"ppo": {"iterations": 2, "learning_rat": 0.1}}', encoding="utf-8")
    with pytest.raises(ValidationError):
        load_config(path)


def test_training_requires_train_ranges():
    test_ranges = RandomizationRanges.for_mode(RangeMode.TEST)
    with pytest.raises(ValidationError):
        RunConfig(mode=RunMode.TRAIN, ranges=test_ranges)
    assert RunConfig(mode=RunMode.EVAL, ranges=test_ranges).ranges.mode is RangeMode.TEST


def test_with_overrides():
    config = RunConfig()
    out = with_overrides(config, **{"ppo.iterations": 7, "seed": 3, "roa.lambda_mult": None})
    assert out.ppo.iterations == 7
    assert out.seed == 3
    assert out.roa.lambda_mult == config.roa.lambda_mult

    with pytest.raises(KeyError):
        with_overrides(config, **{"nothing.here": 1})
    with pytest.raises(ValidationError):
        with_overrides(config, **{"ppo.not_a_field": 1})


def test_environment_defaults(monkeypatch):
    monkeypatch.setenv("PUSHRL_WORKERS", "4")
    monkeypatch.setenv("PUSHRL_OUT_DIR", "/tmp/push-runs")
    monkeypatch.setenv("PUSHRL_DATA_DIR", "/tmp/push-data")
    config = RunConfig()
    assert config.workers == 4
    assert config.paths.out_dir == "/tmp/push-runs"
    assert str(config.paths.registry_path) == "/tmp/push-data/runs.db"

    monkeypatch.setenv("PUSHRL_WORKERS", "many")
    assert RunConfig().workers == 1


def test_explicit_values_beat_environment(monkeypatch):
    monkeypatch.setenv("PUSHRL_OUT_DIR", "/tmp/push-runs")
    assert PathsConfig(out_dir="elsewhere").out_dir == "elsewhere"


def test_eval_config_validation():
    with pytest.raises(ValidationError):
        EvalConfig(encoder=EncoderMode.TEACHER)
    with pytest.raises(ValidationError):
        EvalConfig(criteria=[])
    with pytest.raises(ValidationError):
        EvalConfig(criteria=[(0.0, 5.0)])
    assert EvalConfig(protocol=EvalProtocol.ORIENTATION).protocol_criteria() == [(0.05, 10.0)]
    assert EvalConfig(criteria=[(0.1, 20.0)]).protocol_criteria() == [(0.1, 20.0)]


def test_lambda_schedule():
    ramp = RoaConfig(lambda_mult=2.0, schedule=RoaSchedule.RAMP, ramp_fraction=0.1)
    assert ramp.lambda_at(0, 100) == 0.0
    assert ramp.lambda_at(5, 100) == pytest.approx(1.0)
    assert ramp.lambda_at(50, 100) == 2.0
    assert RoaConfig(lambda_mult=2.0, schedule=RoaSchedule.CONSTANT).lambda_at(0, 100) == 2.0


def test_ablation_table_matches_enum():
    assert {a.value for a in Ablation} == set(ABLATIONS)
    for entry in ABLATIONS.values():
        assert set(entry) == {"name", "description", "eval_encoder"}
        assert EncoderMode(entry["eval_encoder"]) is not EncoderMode.TEACHER
    assert get_ablation_description("no_such_thing") == ABLATIONS["none"]["description"]
    assert get_ablation_name("expert") == "Expert"
    assert get_ablation_name("no_such_thing") == ABLATIONS["none"]["name"]


def test_deployment_encoder_follows_ablation_table(monkeypatch):
    base = _tiny_config()
    assert apply_ablation(base, Ablation.MLP_ENCODER).eval.encoder is EncoderMode.STUDENT
    monkeypatch.setitem(ABLATIONS["mlp_encoder"], "eval_encoder", "expert")
    assert apply_ablation(base, Ablation.MLP_ENCODER).eval.encoder is EncoderMode.EXPERT


def test_orientation_yaws_default_to_preset():
    ev = EvalConfig()
    assert ev.orientation_yaws_deg == ORIENTATION_PROTOCOL_YAWS_DEG
    ev.orientation_yaws_deg.append(270.0)
    assert EvalConfig().orientation_yaws_deg == ORIENTATION_PROTOCOL_YAWS_DEG


def test_no_adaptation_policy_input_width():
    config = apply_ablation(_tiny_config(), Ablation.NO_ADAPTATION)
    agent = Agent(config.network)
    assert agent.policy_spec.input_dim == 36
    assert agent.value_spec.input_dim == 36
    assert not agent.has_encoders
    assert not config.roa.enabled


def test_full_model_policy_input_width():
    agent = Agent(_tiny_config().network)
    assert agent.policy_spec.input_dim == 8 + 33 + 3
    assert agent.teacher_spec.input_dim == 22
    assert agent.student_spec.input_dim == 36


def test_mlp_encoder_flattens_history():
    config = apply_ablation(_tiny_config(), Ablation.MLP_ENCODER)
    agent = Agent(config.network)
    assert config.network.encoder is EncoderKind.MLP
    assert agent.teacher_spec.input_dim == 440
    assert agent.student_spec.input_dim == 720


def test_no_inertial_params_masks_privileged_vector():
    config = apply_ablation(_tiny_config(), Ablation.NO_INERTIAL_PARAMS)
    assert config.network.mask_inertial
    live = ~inertial_mask()
    assert live.sum() == PRIV_DIM - 13 == 9
    for name in ("mass", "com", "inertia"):
        assert not live[PRIV_SLICES[name]].any()


def test_reward_ablations():
    base = _tiny_config()
    assert apply_ablation(base, Ablation.NO_8_KEY_POINTS).reward.extrinsic_metric is ExtrinsicMetric.POSE_ERROR
    assert apply_ablation(base, Ablation.NO_INTRINSIC_SWITCH).reward.intrinsic_switch is False
    expert = apply_ablation(base, Ablation.EXPERT)
    assert expert.eval.encoder is EncoderMode.EXPERT
    # the input config is untouched
    assert base.reward.intrinsic_switch is True
    assert base.ablation is Ablation.NONE
    assert apply_ablation(base, Ablation.NONE) == base


def test_signature_tracks_shapes_only():
    a = NetworkConfig(init_seed=1)
    b = NetworkConfig(init_seed=2, log_std_init=0.0)
    assert a.signature() == b.signature()
    assert a.signature() != NetworkConfig(latent_dim=32).signature()
    np.testing.assert_array_equal(Agent(a).params["policy.W0"], Agent(NetworkConfig(init_seed=1)).params["policy.W0"])
