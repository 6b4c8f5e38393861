"""
Dense network toolkit on numpy: MLP, LSTM with BPTT, Gaussian head, Adam

All computation is float64. Parameters live in a ParamStore keyed by
"<prefix>.<tensor>" so one store can hold the policy, value head and both
encoders side by side.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .errors import ShapeMismatchError
from .physics import ACTION_LIMIT

LOG_2PI = math.log(2.0 * math.pi)

ACTIVATIONS = ("tanh", "relu", "linear")


class ParamStore:
    """Named float64 arrays plus a version counter bumped on every optimizer step"""

    def __init__(self, tensors: Optional[Dict[str, np.ndarray]] = None, version: int = 0):
        self._tensors: Dict[str, np.ndarray] = {}
        self.version = version
        for name, value in (tensors or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._tensors:
            raise ShapeMismatchError(f"Duplicate parameter name: {name}")
        self._tensors[name] = np.asarray(value, dtype=np.float64).copy()

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._tensors:
            raise KeyError(name)
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._tensors[name].shape:
            raise ShapeMismatchError(f"{name}: expected {self._tensors[name].shape}, got {value.shape}")
        self._tensors[name] = value.copy()

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self, prefix: Optional[str] = None) -> List[str]:
        if prefix is None:
            return list(self._tensors)
        return [n for n in self._tensors if n.startswith(prefix + ".")]

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {n: t.shape for n, t in self._tensors.items()}

    def copy(self) -> "ParamStore":
        return ParamStore({n: t for n, t in self._tensors.items()}, self.version)

    def zeros_like(self) -> Dict[str, np.ndarray]:
        return {n: np.zeros_like(t) for n, t in self._tensors.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self._tensors.values())


@dataclass(frozen=True)
class MlpSpec:
    widths: Tuple[int, ...]
    activations: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.widths) < 2:
            raise ShapeMismatchError("An MLP needs at least input and output widths")
        if len(self.activations) != len(self.widths) - 1:
            raise ShapeMismatchError(
                f"{len(self.widths) - 1} layers but {len(self.activations)} activations"
            )
        if min(self.widths) <= 0:
            raise ShapeMismatchError(f"Widths must be positive, got {self.widths}")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ShapeMismatchError(f"Unknown activation: {act}")

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @classmethod
    def hidden(cls, input_dim: int, hidden: List[int], output_dim: int, activation: str = "tanh") -> "MlpSpec":
        """Hidden layers share an activation; the output layer is linear"""
        widths = (input_dim, *hidden, output_dim)
        return cls(widths, tuple([activation] * len(hidden) + ["linear"]))


@dataclass(frozen=True)
class LstmSpec:
    input_dim: int
    hidden_dim: int
    latent_dim: int

    def __post_init__(self):
        if min(self.input_dim, self.hidden_dim, self.latent_dim) <= 0:
            raise ShapeMismatchError("LSTM widths must be positive")


# ----- activations -----

def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - y * y
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ----- MLP -----

def mlp_init(spec: MlpSpec, rng: np.random.Generator, prefix: str,
             out_scale: float = 1.0) -> Dict[str, np.ndarray]:
    """Scaled-normal weights, zero biases; the last layer is scaled by out_scale"""
    tensors = {}
    n_layers = len(spec.widths) - 1
    for i in range(n_layers):
        fan_in, fan_out = spec.widths[i], spec.widths[i + 1]
        scale = 1.0 / math.sqrt(fan_in)
        if i == n_layers - 1:
            scale *= out_scale
        tensors[f"{prefix}.W{i}"] = rng.normal(0.0, scale, size=(fan_in, fan_out))
        tensors[f"{prefix}.b{i}"] = np.zeros(fan_out)
    return tensors


def _as_batch(x: np.ndarray, width: int, name: str) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeMismatchError(f"{name}: expected (..., {width}), got {x.shape}")
    return x, single


@dataclass
class MlpCache:
    inputs: List[np.ndarray]
    pre: List[np.ndarray]
    outputs: List[np.ndarray]
    single: bool


def mlp_forward(spec: MlpSpec, params: ParamStore, x: np.ndarray, prefix: str) -> Tuple[np.ndarray, MlpCache]:
    """
    Forward pass

    Args:
        spec: Layer widths and activations
        params: Store holding "<prefix>.W{i}" (in, out) and "<prefix>.b{i}"
        x: (in,) or (B, in)

    Returns:
        Output with the same leading shape as x, and the cache for mlp_backward
    """
    h, single = _as_batch(x, spec.input_dim, prefix)
    cache = MlpCache([], [], [], single)
    for i, act in enumerate(spec.activations):
        W, b = params[f"{prefix}.W{i}"], params[f"{prefix}.b{i}"]
        if W.shape != (spec.widths[i], spec.widths[i + 1]):
            raise ShapeMismatchError(f"{prefix}.W{i}: expected {(spec.widths[i], spec.widths[i + 1])}, got {W.shape}")
        z = h @ W + b
        y = _activate(act, z)
        cache.inputs.append(h)
        cache.pre.append(z)
        cache.outputs.append(y)
        h = y
    return (h[0] if single else h), cache


def mlp_backward(spec: MlpSpec, params: ParamStore, cache: MlpCache, dy: np.ndarray,
                 prefix: str) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Parameter gradients (summed over the batch) and the input gradient"""
    dy, _ = _as_batch(dy, spec.output_dim, f"{prefix} output grad")
    grads = {}
    for i in reversed(range(len(spec.activations))):
        dz = dy * _activate_grad(spec.activations[i], cache.pre[i], cache.outputs[i])
        grads[f"{prefix}.W{i}"] = cache.inputs[i].T @ dz
        grads[f"{prefix}.b{i}"] = dz.sum(axis=0)
        dy = dz @ params[f"{prefix}.W{i}"].T
    return grads, (dy[0] if cache.single else dy)


# ----- LSTM -----

def lstm_init(spec: LstmSpec, rng: np.random.Generator, prefix: str,
              forget_bias: float = 1.0) -> Dict[str, np.ndarray]:
    """Gate blocks ordered (input, forget, candidate, output)"""
    H = spec.hidden_dim
    b = np.zeros(4 * H)
    b[H:2 * H] = forget_bias
    return {
        f"{prefix}.Wx": rng.normal(0.0, 1.0 / math.sqrt(spec.input_dim), size=(spec.input_dim, 4 * H)),
        f"{prefix}.Wh": rng.normal(0.0, 1.0 / math.sqrt(H), size=(H, 4 * H)),
        f"{prefix}.b": b,
        f"{prefix}.Wp": rng.normal(0.0, 1.0 / math.sqrt(H), size=(H, spec.latent_dim)),
        f"{prefix}.bp": np.zeros(spec.latent_dim),
    }


@dataclass
class LstmCache:
    x: np.ndarray
    h_prev: List[np.ndarray] = field(default_factory=list)
    c_prev: List[np.ndarray] = field(default_factory=list)
    gates: List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    tanh_c: List[np.ndarray] = field(default_factory=list)
    hidden: Optional[np.ndarray] = None
    single: bool = False


def lstm_forward(spec: LstmSpec, params: ParamStore, x: np.ndarray,
                 prefix: str) -> Tuple[np.ndarray, np.ndarray, LstmCache]:
    """
    Run the cell over a sequence from zero state and project every step

    Args:
        x: (N, in) or (B, N, in)

    Returns:
        hidden states (.., N, H), latents (.., N, latent), cache
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != spec.input_dim:
        raise ShapeMismatchError(f"{prefix}: expected (B, N, {spec.input_dim}), got {x.shape}")

    Wx, Wh, b = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.b"]
    Wp, bp = params[f"{prefix}.Wp"], params[f"{prefix}.bp"]
    H = spec.hidden_dim
    if Wx.shape != (spec.input_dim, 4 * H) or Wh.shape != (H, 4 * H) or Wp.shape != (H, spec.latent_dim):
        raise ShapeMismatchError(f"{prefix}: parameter shapes do not match {spec}")

    B, N, _ = x.shape
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hidden = np.zeros((B, N, H))
    cache = LstmCache(x=x, single=single)
    for t in range(N):
        z = x[:, t] @ Wx + h @ Wh + b
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = sigmoid(z[:, 3 * H:])
        cache.h_prev.append(h)
        cache.c_prev.append(c)
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        cache.gates.append((i, f, g, o))
        cache.tanh_c.append(tc)
        hidden[:, t] = h

    latents = hidden @ Wp + bp
    cache.hidden = hidden
    if single:
        return hidden[0], latents[0], cache
    return hidden, latents, cache


def lstm_backward(spec: LstmSpec, params: ParamStore, cache: LstmCache, d_latents: np.ndarray,
                  prefix: str) -> Tuple[Dict[str, np.ndarray], np.ndarray]:
    """Backpropagation through time; returns parameter grads and d(input sequence)"""
    d_latents = np.asarray(d_latents, dtype=np.float64)
    if cache.single:
        d_latents = d_latents[None]
    if d_latents.shape != cache.hidden.shape[:2] + (spec.latent_dim,):
        raise ShapeMismatchError(f"{prefix}: latent grad shape {d_latents.shape} does not match forward pass")

    Wx, Wh, Wp = params[f"{prefix}.Wx"], params[f"{prefix}.Wh"], params[f"{prefix}.Wp"]
    H = spec.hidden_dim
    B, N, _ = cache.x.shape

    grads = {
        f"{prefix}.Wx": np.zeros_like(Wx),
        f"{prefix}.Wh": np.zeros_like(Wh),
        f"{prefix}.b": np.zeros(4 * H),
        f"{prefix}.Wp": np.einsum("bnh,bnl->hl", cache.hidden, d_latents),
        f"{prefix}.bp": d_latents.sum(axis=(0, 1)),
    }
    d_hidden = d_latents @ Wp.T
    dx = np.zeros_like(cache.x)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))

    for t in reversed(range(N)):
        i, f, g, o = cache.gates[t]
        tc = cache.tanh_c[t]
        dh = d_hidden[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * cache.c_prev[t]
        dc_next = dc * f

        dz = np.concatenate([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ], axis=1)
        grads[f"{prefix}.Wx"] += cache.x[:, t].T @ dz
        grads[f"{prefix}.Wh"] += cache.h_prev[t].T @ dz
        grads[f"{prefix}.b"] += dz.sum(axis=0)
        dx[:, t] = dz @ Wx.T
        dh_next = dz @ Wh.T

    return grads, (dx[0] if cache.single else dx)


# ----- action head -----

def squash_action(raw: np.ndarray) -> np.ndarray:
    """Per-axis 1.5 * tanh(raw): odd, strictly monotone, inside (-1.5, 1.5)"""
    return ACTION_LIMIT * np.tanh(np.asarray(raw, dtype=np.float64))


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, raw: np.ndarray) -> np.ndarray:
    """Diagonal Gaussian log-density summed over the last axis"""
    mean = np.asarray(mean, dtype=np.float64)
    z = (np.asarray(raw, dtype=np.float64) - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def gaussian_sample(mean: np.ndarray, log_std: np.ndarray,
                    rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (raw action, log_prob)"""
    mean = np.asarray(mean, dtype=np.float64)
    raw = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return raw, gaussian_log_prob(mean, log_std, raw)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + 0.5 * (LOG_2PI + 1.0)))


# ----- Adam -----

@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    lr_halved: bool = False
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamStore, grads: Dict[str, np.ndarray], state: AdamState) -> ParamStore:
    """Bias-corrected Adam update of every parameter named in grads, in place"""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        p = params[name]
        if g.shape != p.shape:
            raise ShapeMismatchError(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.version += 1
    return params


def global_norm(grads: Dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_by_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {n: g * scale for n, g in grads.items()}
    return grads, norm
