"""Invariant suite behind the `check` command: gradient checks, analytic physics and reward oracles"""

import logging
import math
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from .env_gen import RandomizationRanges, principal_inertia, randomize_inertia, sample_com, sample_object
from .errors import InvariantViolationError
from .nn import (
    LstmSpec, MlpSpec, ParamStore, gaussian_log_prob,
    lstm_backward, lstm_forward, lstm_init, mlp_backward, mlp_forward, mlp_init,
)
from .physics import ObjectSpec, Pose2, ServoModel, Shape, SimConfig, Twist2, WorldState, step
from .rewards import RewardCoeffs, RewardState, extrinsic, intrinsic_components
from .config import PpoConfig
from .rl_train import gae, ppo_loss, roa_loss

logger = logging.getLogger(__name__)

GRAD_TOL = 1e-4


class CheckResult(BaseModel):
    name: str
    passed: bool
    detail: str


class CheckReport(BaseModel):
    passed: bool
    checks: List[CheckResult]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> float:
    """Elementwise |a - b| / max(|a|, |b|, floor)"""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def numeric_grad(f: Callable[[], float], array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of f() w.r.t. every entry of array, perturbed in place"""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        grad[it.multi_index] = _central_difference(f, array, it.multi_index, eps)
    return grad


def _central_difference(f: Callable[[], float], array: np.ndarray, idx: Tuple[int, ...], eps: float) -> float:
    orig = array[idx]
    array[idx] = orig + eps
    plus = f()
    array[idx] = orig - eps
    minus = f()
    array[idx] = orig
    return (plus - minus) / (2.0 * eps)


def sampled_grad_error(f: Callable[[], float], params: ParamStore, grads: Dict[str, np.ndarray],
                       names: List[str], rng: np.random.Generator, per_tensor: int = 64,
                       eps: float = 1e-5) -> Dict[str, float]:
    """
    Relative error of analytic gradients against central differences

    Tensors with more than per_tensor entries are checked on a seeded sample of
    flat indices; smaller ones on every entry.

    Returns:
        Worst relative error per tensor name
    """
    errors = {}
    for name in names:
        array = params[name]
        if array.size <= per_tensor:
            flat = np.arange(array.size)
        else:
            flat = rng.choice(array.size, size=per_tensor, replace=False)
        analytic, numeric = [], []
        for k in flat:
            idx = np.unravel_index(int(k), array.shape)
            analytic.append(grads[name][idx])
            numeric.append(_central_difference(f, array, idx, eps))
        errors[name] = relative_error(np.array(analytic), np.array(numeric))
    return errors


def _require(condition, message: str) -> None:
    if not condition:
        raise InvariantViolationError(message)


def _worst(errors: Dict[str, float]) -> Tuple[str, float]:
    name = max(errors, key=errors.get)
    return name, errors[name]


def _check_mlp_gradients() -> str:
    rng = np.random.default_rng(1)
    spec = MlpSpec((132, 64, 64, 3), ("tanh", "tanh", "linear"))
    params = ParamStore(mlp_init(spec, rng, "net"))
    x = rng.normal(size=(2, 132))
    w = rng.normal(size=(2, 3))

    def loss() -> float:
        y, _ = mlp_forward(spec, params, x, "net")
        return float(np.sum(y * w))

    _, cache = mlp_forward(spec, params, x, "net")
    grads, _ = mlp_backward(spec, params, cache, w, "net")
    name, worst = _worst(sampled_grad_error(loss, params, grads, params.names("net"), rng))
    _require(worst < GRAD_TOL, f"{name}: relative error {worst:.2e}")
    return f"max rel err {worst:.2e} over {len(params)} tensors"


def _check_lstm_gradients() -> str:
    rng = np.random.default_rng(2)
    spec = LstmSpec(4, 5, 3)
    params = ParamStore(lstm_init(spec, rng, "enc"))
    x = rng.normal(size=(2, 5, 4))
    w = rng.normal(size=(2, 5, 3))

    def loss() -> float:
        _, latents, _ = lstm_forward(spec, params, x, "enc")
        return float(np.sum(latents * w))

    _, _, cache = lstm_forward(spec, params, x, "enc")
    grads, _ = lstm_backward(spec, params, cache, w, "enc")
    name, worst = _worst({n: relative_error(grads[n], numeric_grad(loss, params[n])) for n in params.names("enc")})
    _require(worst < GRAD_TOL, f"{name}: relative error {worst:.2e}")
    return f"max rel err {worst:.2e} over {len(params)} tensors"


def _check_ppo_gradients() -> str:
    rng = np.random.default_rng(3)
    cfg = PpoConfig()
    raw = rng.normal(size=(4, 3))
    adv = rng.normal(size=4)
    ret = rng.normal(size=4)
    mean = raw + 0.1 * rng.normal(size=(4, 3))
    log_std = np.full(3, math.log(0.5))
    old = gaussian_log_prob(mean, log_std, raw) + rng.normal(0.0, 0.1, size=4)
    values = rng.normal(size=4)

    def loss() -> float:
        return ppo_loss(raw, old, adv, ret, mean, log_std, values, cfg).loss

    res = ppo_loss(raw, old, adv, ret, mean, log_std, values, cfg)
    worst = max(
        relative_error(res.d_mean, numeric_grad(loss, mean)),
        relative_error(res.d_log_std, numeric_grad(loss, log_std)),
        relative_error(res.d_value, numeric_grad(loss, values)),
    )
    _require(worst < GRAD_TOL, f"relative error {worst:.2e}")
    return f"max rel err {worst:.2e}"


def _check_rewards() -> str:
    coeffs = RewardCoeffs()
    zero = np.zeros(24)
    at_goal = extrinsic(zero, zero, coeffs)
    _require(math.isclose(at_goal, 4.0 * math.log(0.05), rel_tol=1e-12), f"extrinsic at the goal {at_goal}")
    obj = ObjectSpec(Shape.BOX, (1.0, 1.0, 1.0), 10.0, np.diag(principal_inertia(Shape.BOX, (1, 1, 1), 10.0)),
                     np.zeros(3), 0.3, 0.5)
    world = WorldState(Pose2(0, 0, 0), Twist2(), Pose2(0, 0, 0), Twist2(), obj, Pose2(2, 0, 0))
    r1, r3, r4, r5, r6 = intrinsic_components(world, np.zeros(3), RewardState(), coeffs)
    _require((r1, r3, r4, r5, r6) == (1.0, 1.0, 1.0, 2.0, 3.0), f"intrinsic terms {(r1, r3, r4, r5, r6)}")
    return "r1=1 r5=2 r6=3 extrinsic(0)=4 ln 0.05"


def _check_gae() -> str:
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        T = int(rng.integers(1, 30))
        rewards, values = rng.normal(size=T), rng.normal(size=T)
        dones = (rng.uniform(size=T) < 0.1).astype(float)
        gamma = float(rng.uniform(0.9, 1.0))
        adv, _ = gae(rewards, values, dones, gamma, 1.0)
        brute = np.zeros(T)
        for t in range(T):
            total, discount = 0.0, 1.0
            for k in range(t, T):
                total += discount * rewards[k]
                if dones[k]:
                    break
                discount *= gamma
            brute[t] = total - values[t]
        worst = max(worst, float(np.max(np.abs(adv - brute))))
    _require(worst < 1e-10, f"abs error {worst:.2e}")
    return f"max abs err {worst:.2e} over 100 sequences"


def _check_inertia() -> str:
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        moments = rng.uniform(0.1, 5.0, size=3)
        rotated = randomize_inertia(moments, rng.uniform(-180, 180), int(rng.integers(3)))
        worst = max(worst, float(np.max(np.abs(np.sort(np.linalg.eigvalsh(rotated)) - np.sort(moments)))))
    _require(worst < 1e-10, f"eigenvalue drift {worst:.2e}")
    return f"max eigenvalue drift {worst:.2e}"


def _check_com_containment() -> str:
    rng = np.random.default_rng(6)
    scale = 0.5 ** (1.0 / 3.0)
    for _ in range(10_000):
        offset = sample_com((1.0, 1.0, 1.0), Shape.BOX, 50.0, rng)
        _require(np.all(np.abs(offset) <= scale / 2.0 + 1e-12), f"COM offset {offset} outside the scaled box")
    ranges = RandomizationRanges()
    for _ in range(1_000):
        sample_object(ranges, rng)
    return "10000 box samples inside the scaled box; 1000 objects valid"


def _check_coulomb_slide() -> str:
    cfg = SimConfig()
    obj = ObjectSpec(Shape.BOX, (1.0, 1.0, 1.0), 10.0, np.diag(principal_inertia(Shape.BOX, (1, 1, 1), 10.0)),
                     np.zeros(3), 0.3, 0.0)
    world = WorldState(Pose2(-5, 0, 0), Twist2(), Pose2(0, 0, 0), Twist2(1.0, 0, 0), obj, Pose2(3, 0, 0))
    nxt = step(world, Twist2(), ServoModel(), cfg)
    decel = (1.0 - nxt.object_twist.vx) / cfg.dt
    expected = 0.3 * cfg.gravity
    _require(abs(decel - expected) / expected < 1e-3, f"deceleration {decel}")
    return f"deceleration {decel:.5f} m/s^2"


def _check_roa_routing() -> str:
    rng = np.random.default_rng(7)
    l, l_tilde = rng.normal(size=(4, 96)), rng.normal(size=(4, 96))
    _, d_teacher, d_student = roa_loss(l, l_tilde, 0.0)
    _require(np.all(d_student == 0.0) and np.any(d_teacher != 0.0), "lambda = 0 still reaches the student latent")
    _, d_teacher, d_student = roa_loss(l, l_tilde, 1.0, reg_weight=0.0)
    _require(np.all(d_teacher == 0.0) and np.any(d_student != 0.0),
             "regularizer-free loss still reaches the teacher latent")
    return "student only through lambda term, teacher only through regularizer"


CHECKS: Dict[str, Callable[[], str]] = {
    "mlp_gradients": _check_mlp_gradients,
    "lstm_bptt_gradients": _check_lstm_gradients,
    "ppo_loss_gradients": _check_ppo_gradients,
    "reward_oracles": _check_rewards,
    "gae_oracle": _check_gae,
    "inertia_spectrum": _check_inertia,
    "com_containment": _check_com_containment,
    "coulomb_slide": _check_coulomb_slide,
    "roa_routing": _check_roa_routing,
}


def run_checks(names: Optional[List[str]] = None) -> CheckReport:
    """Run every (or the named) invariant check; failures are collected, never raised"""
    results = []
    for name, fn in CHECKS.items():
        if names and name not in names:
            continue
        try:
            detail = fn()
            results.append(CheckResult(name=name, passed=True, detail=detail))
            logger.info(f"✓ {name}: {detail}")
        except Exception as e:
            results.append(CheckResult(name=name, passed=False, detail=str(e) or type(e).__name__))
            logger.warning(f"✗ {name}: {e}")
    return CheckReport(passed=all(r.passed for r in results), checks=results)
