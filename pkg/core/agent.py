"""High-level agent: teacher/student history encoders, Gaussian policy and value head"""

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .errors import NonFiniteError, ShapeMismatchError
from .nn import (
    LstmCache, LstmSpec, MlpCache, MlpSpec, ParamStore,
    lstm_backward, lstm_forward, lstm_init, mlp_backward, mlp_forward, mlp_init,
)
from .state_obs import ACTION_DIM, HISTORY_LEN, OBS_DIM, PRIV_DIM, STUDENT_STEP_DIM


class EncoderKind(str, Enum):
    LSTM = "lstm"
    MLP = "mlp"


class EncoderMode(str, Enum):
    """Which latent the policy consumes: teacher in training, student or expert at deployment"""

    TEACHER = "teacher"
    STUDENT = "student"
    EXPERT = "expert"


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    policy_hidden: List[int] = Field(default_factory=lambda: [256, 128])
    value_hidden: List[int] = Field(default_factory=lambda: [256, 128])
    activation: str = "tanh"
    encoder: EncoderKind = EncoderKind.LSTM
    lstm_hidden: int = Field(default=128, ge=1)
    mlp_encoder_hidden: List[int] = Field(default_factory=lambda: [256])
    latent_dim: int = Field(default=96, ge=1)
    # False drops the latent from the policy input (no adaptation)
    use_latent: bool = True
    # zero mass/COM/inertia slots of the privileged vector
    mask_inertial: bool = False
    log_std_init: float = math.log(0.5)
    init_seed: int = 0

    @field_validator("policy_hidden", "value_hidden", "mlp_encoder_hidden")
    @classmethod
    def _widths_positive(cls, value):
        if any(w <= 0 for w in value):
            raise ValueError("hidden widths must be positive")
        return value

    @field_validator("activation")
    @classmethod
    def _known_activation(cls, value):
        if value not in ("tanh", "relu"):
            raise ValueError("activation must be 'tanh' or 'relu'")
        return value

    def signature(self) -> str:
        """Shape-relevant fields only; hashed into checkpoints"""
        return json.dumps(self.model_dump(mode="json", exclude={"log_std_init", "init_seed"}), sort_keys=True)


EncoderSpec = Union[LstmSpec, MlpSpec]


@dataclass
class ForwardPass:
    """Batched forward results plus the caches needed for backward()"""

    mean: np.ndarray
    value: np.ndarray
    l_teacher: Optional[np.ndarray]
    l_student: Optional[np.ndarray]
    mode: EncoderMode
    policy_cache: MlpCache
    value_cache: MlpCache
    teacher_cache: Optional[Union[LstmCache, MlpCache]] = None
    student_cache: Optional[Union[LstmCache, MlpCache]] = None


class Agent:
    """
    Parameter names:
        teacher.*  encoder over the privileged history X
        student.*  encoder over the observable history H
        policy.*   mean MLP plus policy.log_std
        value.*    value MLP
    """

    def __init__(self, cfg: Optional[NetworkConfig] = None, params: Optional[ParamStore] = None):
        self.cfg = cfg or NetworkConfig()
        latent = self.cfg.latent_dim if self.cfg.use_latent else 0
        head_in = latent + OBS_DIM + ACTION_DIM

        self.policy_spec = MlpSpec.hidden(head_in, self.cfg.policy_hidden, ACTION_DIM, self.cfg.activation)
        self.value_spec = MlpSpec.hidden(head_in, self.cfg.value_hidden, 1, self.cfg.activation)
        self.teacher_spec: Optional[EncoderSpec] = None
        self.student_spec: Optional[EncoderSpec] = None
        if self.cfg.use_latent:
            self.teacher_spec = self._encoder_spec(PRIV_DIM)
            self.student_spec = self._encoder_spec(STUDENT_STEP_DIM)

        if params is None:
            params = self.init_params(np.random.default_rng(self.cfg.init_seed))
        self._check_shapes(params)
        self.params = params

    def _encoder_spec(self, step_dim: int) -> EncoderSpec:
        if self.cfg.encoder is EncoderKind.LSTM:
            return LstmSpec(step_dim, self.cfg.lstm_hidden, self.cfg.latent_dim)
        return MlpSpec.hidden(step_dim * HISTORY_LEN, self.cfg.mlp_encoder_hidden,
                              self.cfg.latent_dim, self.cfg.activation)

    @property
    def has_encoders(self) -> bool:
        return self.teacher_spec is not None

    def init_params(self, rng: np.random.Generator) -> ParamStore:
        tensors: Dict[str, np.ndarray] = {}
        tensors.update(mlp_init(self.policy_spec, rng, "policy", out_scale=0.01))
        tensors["policy.log_std"] = np.full(ACTION_DIM, self.cfg.log_std_init)
        tensors.update(mlp_init(self.value_spec, rng, "value"))
        for prefix, spec in (("teacher", self.teacher_spec), ("student", self.student_spec)):
            if spec is None:
                continue
            if isinstance(spec, LstmSpec):
                tensors.update(lstm_init(spec, rng, prefix))
            else:
                tensors.update(mlp_init(spec, rng, prefix))
        return ParamStore(tensors)

    def _check_shapes(self, params: ParamStore) -> None:
        expected = self.init_params(np.random.default_rng(0)).shapes()
        actual = params.shapes()
        if expected != actual:
            missing = sorted(set(expected) ^ set(actual))
            wrong = sorted(n for n in set(expected) & set(actual) if expected[n] != actual[n])
            raise ShapeMismatchError(f"Parameter layout mismatch (names: {missing}, shapes: {wrong})")

    def signature(self) -> str:
        return self.cfg.signature()

    # ----- forward -----

    def _encode(self, prefix: str, spec: EncoderSpec, history: np.ndarray):
        """Last latent l^N of the sequence, plus its cache"""
        history = np.asarray(history, dtype=np.float64)
        if isinstance(spec, LstmSpec):
            _, latents, cache = lstm_forward(spec, self.params, history, prefix)
            return latents[:, -1], cache
        flat = history.reshape(history.shape[0], -1)
        latent, cache = mlp_forward(spec, self.params, flat, prefix)
        return latent, cache

    def forward(
        self,
        X: np.ndarray,
        H: np.ndarray,
        obs: np.ndarray,
        prev_action: np.ndarray,
        mode: EncoderMode = EncoderMode.TEACHER,
        need_both: bool = False
    ) -> ForwardPass:
        """
        Batched forward pass

        Args:
            X: (B, N, 22) privileged histories
            H: (B, N, 36) observable histories
            obs: (B, 33) current observations
            prev_action: (B, 3) previous high-level actions
            mode: Latent routed into the policy/value heads
            need_both: Also run the encoder the heads do not consume

        Returns:
            ForwardPass with mean (B, 3) and value (B,)
        """
        mode = EncoderMode(mode)
        obs = np.asarray(obs, dtype=np.float64)
        prev_action = np.asarray(prev_action, dtype=np.float64)
        if obs.ndim != 2 or obs.shape[1] != OBS_DIM or prev_action.shape != (obs.shape[0], ACTION_DIM):
            raise ShapeMismatchError(f"obs {obs.shape} / prev_action {prev_action.shape} do not form a batch")

        l_teacher = l_student = None
        teacher_cache = student_cache = None
        use_teacher = mode in (EncoderMode.TEACHER, EncoderMode.EXPERT)
        if self.has_encoders:
            if use_teacher or need_both:
                l_teacher, teacher_cache = self._encode("teacher", self.teacher_spec, X)
            if not use_teacher or need_both:
                l_student, student_cache = self._encode("student", self.student_spec, H)
            latent = l_teacher if use_teacher else l_student
            head_in = np.concatenate([latent, obs, prev_action], axis=1)
        else:
            head_in = np.concatenate([obs, prev_action], axis=1)

        mean, policy_cache = mlp_forward(self.policy_spec, self.params, head_in, "policy")
        value, value_cache = mlp_forward(self.value_spec, self.params, head_in, "value")
        value = value[:, 0]
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(value))):
            raise NonFiniteError("Policy or value head produced non-finite output")

        return ForwardPass(mean, value, l_teacher, l_student, mode, policy_cache, value_cache,
                           teacher_cache, student_cache)

    @property
    def log_std(self) -> np.ndarray:
        return self.params["policy.log_std"]

    # ----- backward -----

    def _encoder_backward(self, prefix: str, spec: EncoderSpec, cache, d_last: np.ndarray) -> Dict[str, np.ndarray]:
        if isinstance(spec, LstmSpec):
            B, N = cache.hidden.shape[:2]
            d_latents = np.zeros((B, N, spec.latent_dim))
            d_latents[:, -1] = d_last
            grads, _ = lstm_backward(spec, self.params, cache, d_latents, prefix)
        else:
            grads, _ = mlp_backward(spec, self.params, cache, d_last, prefix)
        return grads

    def backward(
        self,
        fp: ForwardPass,
        d_mean: np.ndarray,
        d_value: np.ndarray,
        d_teacher: Optional[np.ndarray] = None,
        d_student: Optional[np.ndarray] = None
    ) -> Dict[str, np.ndarray]:
        """
        Gradients of every parameter group

        Head gradients flow into whichever encoder fed the heads; d_teacher and
        d_student add direct latent gradients (the adaptation loss).
        """
        grads, dx_policy = mlp_backward(self.policy_spec, self.params, fp.policy_cache, d_mean, "policy")
        value_grads, dx_value = mlp_backward(self.value_spec, self.params, fp.value_cache,
                                             np.asarray(d_value, dtype=np.float64)[:, None], "value")
        grads.update(value_grads)
        grads["policy.log_std"] = np.zeros(ACTION_DIM)

        if not self.has_encoders:
            return grads

        latent_dim = self.cfg.latent_dim
        d_head_latent = dx_policy[:, :latent_dim] + dx_value[:, :latent_dim]
        B = d_head_latent.shape[0]
        d_l = {"teacher": np.zeros((B, latent_dim)), "student": np.zeros((B, latent_dim))}
        d_l["teacher" if fp.mode in (EncoderMode.TEACHER, EncoderMode.EXPERT) else "student"] += d_head_latent
        if d_teacher is not None:
            d_l["teacher"] += d_teacher
        if d_student is not None:
            d_l["student"] += d_student

        for prefix, spec, cache in (("teacher", self.teacher_spec, fp.teacher_cache),
                                    ("student", self.student_spec, fp.student_cache)):
            if cache is None:
                grads.update({n: np.zeros_like(self.params[n]) for n in self.params.names(prefix)})
            else:
                grads.update(self._encoder_backward(prefix, spec, cache, d_l[prefix]))
        return grads

    # ----- acting -----

    def act_deterministic(self, X: np.ndarray, H: np.ndarray, obs: np.ndarray, prev_action: np.ndarray,
                          mode: EncoderMode) -> ForwardPass:
        """Single-environment forward; the caller squashes fp.mean[0]"""
        return self.forward(X[None], H[None], obs[None], prev_action[None], mode)
