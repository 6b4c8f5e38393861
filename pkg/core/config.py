"""Run configuration: one JSON document validated into pydantic models"""

import os
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from presets.tables import ABLATIONS, DEFAULT_CRITERIA, ORIENTATION_PROTOCOL_CRITERIA, ORIENTATION_PROTOCOL_YAWS_DEG
from .agent import EncoderKind, EncoderMode, NetworkConfig
from .env_gen import RandomizationRanges, RangeMode, TaskConfig
from .physics import ServoModel, SimConfig
from .rewards import ExtrinsicMetric, RewardConfig

load_dotenv()


class RunMode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"
    REPLAY = "replay"
    CHECK = "check"


class Ablation(str, Enum):
    NONE = "none"
    NO_ADAPTATION = "no_adaptation"
    MLP_ENCODER = "mlp_encoder"
    NO_8_KEY_POINTS = "no_8_key_points"
    NO_INTRINSIC_SWITCH = "no_intrinsic_switch"
    NO_INERTIAL_PARAMS = "no_inertial_params"
    EXPERT = "expert"


class RoaSchedule(str, Enum):
    CONSTANT = "constant"
    RAMP = "ramp"


class EvalProtocol(str, Enum):
    RANDOM = "random"
    ORIENTATION = "orientation"


class PpoConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gamma: float = Field(default=0.996, gt=0, le=1)
    gae_lambda: float = Field(default=0.95, ge=0, le=1)
    clip_epsilon: float = Field(default=0.2, gt=0)
    epochs: int = Field(default=4, ge=1)
    minibatch_size: int = Field(default=256, ge=1)
    value_coef: float = Field(default=0.5, ge=0)
    entropy_coef: float = Field(default=0.003, ge=0)
    learning_rate: float = Field(default=3e-4, gt=0)
    max_grad_norm: float = Field(default=1.0, ge=0)
    normalize_advantages: bool = True
    # high-level steps per env per iteration
    horizon: int = Field(default=64, ge=1)
    env_count: int = Field(default=16, ge=1)
    iterations: int = Field(default=100, ge=1)
    checkpoint_every: int = Field(default=10, ge=1)


class RoaConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lambda_mult: float = Field(default=1.0, ge=0)
    schedule: RoaSchedule = RoaSchedule.RAMP
    ramp_fraction: float = Field(default=0.1, gt=0, le=1)
    squared: bool = False
    # False leaves the student untrained and skips the adaptation loss
    enabled: bool = True

    def lambda_at(self, iteration: int, total_iterations: int) -> float:
        if self.schedule is RoaSchedule.CONSTANT:
            return self.lambda_mult
        ramp = max(1.0, self.ramp_fraction * total_iterations)
        return self.lambda_mult * min(1.0, iteration / ramp)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    episodes: int = Field(default=200, ge=1)
    seed: int = 10_000
    range_mode: RangeMode = RangeMode.TEST
    criteria: List[Tuple[float, float]] = Field(default_factory=lambda: list(DEFAULT_CRITERIA))
    encoder: EncoderMode = EncoderMode.STUDENT
    protocol: EvalProtocol = EvalProtocol.RANDOM
    orientation_yaws_deg: List[float] = Field(default_factory=lambda: list(ORIENTATION_PROTOCOL_YAWS_DEG))
    orientation_trials: int = Field(default=10, ge=1)
    # stop an episode once every criterion has been met
    stop_on_success: bool = False

    @field_validator("criteria")
    @classmethod
    def _criteria(cls, value):
        if not value:
            raise ValueError("at least one success criterion is required")
        if any(d <= 0 or theta <= 0 for d, theta in value):
            raise ValueError("criterion tolerances must be positive")
        return value

    @field_validator("encoder")
    @classmethod
    def _deploy_encoder(cls, value):
        if value is EncoderMode.TEACHER:
            raise ValueError("evaluation encoder must be 'student' or 'expert'")
        return value

    def eval_ranges(self) -> RandomizationRanges:
        return RandomizationRanges.for_mode(self.range_mode)

    def protocol_criteria(self) -> List[Tuple[float, float]]:
        if self.protocol is EvalProtocol.ORIENTATION and self.criteria == list(DEFAULT_CRITERIA):
            return list(ORIENTATION_PROTOCOL_CRITERIA)
        return list(self.criteria)


def _env_int(name: str, default: int) -> int:
    try:
        return int(os.getenv(name, default))
    except ValueError:
        return default


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    out_dir: str = Field(default_factory=lambda: os.getenv("PUSHRL_OUT_DIR", "runs"))
    data_dir: str = Field(default_factory=lambda: os.getenv("PUSHRL_DATA_DIR", "data"))
    checkpoint: Optional[str] = None

    @property
    def registry_path(self) -> Path:
        return Path(self.data_dir) / "runs.db"


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: RunMode = RunMode.TRAIN
    seed: int = 0
    workers: int = Field(default_factory=lambda: max(1, _env_int("PUSHRL_WORKERS", 1)), ge=1)
    ablation: Ablation = Ablation.NONE
    sim: SimConfig = Field(default_factory=SimConfig)
    servo: ServoModel = Field(default_factory=ServoModel)
    task: TaskConfig = Field(default_factory=TaskConfig)
    ranges: RandomizationRanges = Field(default_factory=RandomizationRanges)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    ppo: PpoConfig = Field(default_factory=PpoConfig)
    roa: RoaConfig = Field(default_factory=RoaConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _ranges_mode(self):
        if self.ranges.mode is not RangeMode.TRAIN and self.mode is RunMode.TRAIN:
            raise ValueError("training must use Train ranges")
        return self


def load_config(path) -> RunConfig:
    """Read and validate a JSON run config; raises pydantic.ValidationError"""
    return RunConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))


def with_overrides(config: RunConfig, **overrides) -> RunConfig:
    """Apply dotted-path overrides such as {"ppo.iterations": 2}; None values are ignored"""
    data = config.model_dump(mode="json")
    for key, value in overrides.items():
        if value is None:
            continue
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return RunConfig.model_validate(data)


def _network_update(config: RunConfig, **fields) -> Dict:
    return {"network": config.network.model_copy(update=fields)}


def apply_ablation(config: RunConfig, ablation: Optional[Ablation] = None) -> RunConfig:
    """
    Realise exactly one ablation on top of a config

    Args:
        config: Base run config
        ablation: Overrides config.ablation when given

    Returns:
        New RunConfig; the input is not modified
    """
    ablation = Ablation(ablation if ablation is not None else config.ablation)
    update: Dict = {"ablation": ablation}

    if ablation is Ablation.NO_ADAPTATION:
        update.update(_network_update(config, use_latent=False))
        update["roa"] = config.roa.model_copy(update={"enabled": False})
    elif ablation is Ablation.MLP_ENCODER:
        update.update(_network_update(config, encoder=EncoderKind.MLP))
    elif ablation is Ablation.NO_8_KEY_POINTS:
        update["reward"] = config.reward.model_copy(update={"extrinsic_metric": ExtrinsicMetric.POSE_ERROR})
    elif ablation is Ablation.NO_INTRINSIC_SWITCH:
        update["reward"] = config.reward.model_copy(update={"intrinsic_switch": False})
    elif ablation is Ablation.NO_INERTIAL_PARAMS:
        update.update(_network_update(config, mask_inertial=True))

    deploy = EncoderMode(ABLATIONS[ablation.value]["eval_encoder"])
    if deploy is not EncoderMode.STUDENT:
        update["eval"] = config.eval.model_copy(update={"encoder": deploy})

    return config.model_copy(update=update)
