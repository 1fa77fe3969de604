"""Tiny MLP substrate for the GAN pairs: forward pass, hand-written backprop,
the two BCE losses, and SGD / Adam updates.

Parameters live in one flat float64 vector per model. Each layer contributes
its ``input_size x output_size`` weight matrix (row-major) followed by its bias
vector. A layer computes ``act(x @ W + b)``.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, TrainingError
from .grid import CellId

EPS = 1e-7  # probability clamp applied before every log


class Activation(str, enum.Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


class Role(str, enum.Enum):
    GENERATOR = "generator"
    DISCRIMINATOR = "discriminator"


@dataclass(frozen=True)
class LayerSpec:
    input_size: int
    output_size: int
    activation: Activation = Activation.TANH

    def __post_init__(self):
        if self.input_size < 1 or self.output_size < 1:
            raise ConfigError(f"layer sizes must be >= 1, got {self.input_size}x{self.output_size}")

    @property
    def n_params(self) -> int:
        return self.input_size * self.output_size + self.output_size


def n_params(layers: Sequence[LayerSpec]) -> int:
    return sum(layer.n_params for layer in layers)


@functools.lru_cache(maxsize=None)
def _offsets(layers: tuple[LayerSpec, ...]) -> tuple[tuple[int, int, int], ...]:
    """(weight start, bias start, bias end) per layer."""
    out, offset = [], 0
    for layer in layers:
        w_end = offset + layer.input_size * layer.output_size
        out.append((offset, w_end, w_end + layer.output_size))
        offset = w_end + layer.output_size
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Immutable architecture + flat weight vector."""

    layers: tuple[LayerSpec, ...]
    weights: np.ndarray

    def __post_init__(self):
        layers = tuple(self.layers)
        for a, b in zip(layers, layers[1:]):
            if a.output_size != b.input_size:
                raise ConfigError(f"layer widths do not chain: {a.output_size} -> {b.input_size}")
        w = np.array(self.weights, dtype=np.float64).ravel()
        if w.size != n_params(layers):
            raise ConfigError(f"expected {n_params(layers)} weights, got {w.size}")
        if not np.all(np.isfinite(w)):
            raise TrainingError("non-finite model weights")
        w.flags.writeable = False
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_views", None)

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.layers[-1].output_size

    def with_weights(self, weights: np.ndarray) -> "ModelParams":
        return ModelParams(self.layers, weights)

    def _replaced(self, weights: np.ndarray) -> "ModelParams":
        # hot path for optimizer steps: shape and finiteness already checked by the caller
        new = object.__new__(ModelParams)
        weights.flags.writeable = False
        object.__setattr__(new, "layers", self.layers)
        object.__setattr__(new, "weights", weights)
        object.__setattr__(new, "_views", None)
        return new

    def unpack(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into the flat vector (computed once)."""
        if self._views is None:
            views = []
            for layer, (w0, w1, b1) in zip(self.layers, _offsets(self.layers)):
                W = self.weights[w0:w1].reshape(layer.input_size, layer.output_size)
                views.append((W, self.weights[w1:b1]))
            object.__setattr__(self, "_views", views)
        return self._views

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return self.layers == other.layers and np.array_equal(self.weights, other.weights)

    __hash__ = None


@dataclass(frozen=True)
class ModelSnapshot:
    """What a cell publishes: parameters plus the learning rate they travel with."""

    params: ModelParams
    role: Role
    learning_rate: float
    origin: CellId
    version: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")


def mlp_layers(sizes: Sequence[int], hidden: Activation, output: Activation) -> tuple[LayerSpec, ...]:
    """``sizes = [in, h1, ..., out]`` -> layer specs with ``hidden`` everywhere but the last."""
    if len(sizes) < 2:
        raise ConfigError("an MLP needs at least input and output sizes")
    acts = [hidden] * (len(sizes) - 2) + [output]
    return tuple(LayerSpec(i, o, a) for i, o, a in zip(sizes[:-1], sizes[1:], acts))


def init_params(layers: Sequence[LayerSpec], rng: np.random.Generator) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    chunks = []
    for layer in layers:
        bound = 1.0 / math.sqrt(layer.input_size)
        chunks.append(rng.uniform(-bound, bound, size=layer.n_params))
    return ModelParams(tuple(layers), np.concatenate(chunks))


# --------------------------------------------------------------------------- forward


def _activate(a: np.ndarray, act: Activation) -> np.ndarray:
    if act is Activation.TANH:
        return np.tanh(a)
    if act is Activation.SIGMOID:
        # tanh form never overflows
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    return a


def _check_input(model: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != model.input_size:
        raise ConfigError(f"input width {x.shape[-1]} does not match model input {model.input_size}")
    return x


def _forward_trace(model: ModelParams, x: np.ndarray):
    """Forward pass keeping each layer's input and output for backprop."""
    x = _check_input(model, x)
    trace = []
    h = x
    for layer, (W, b) in zip(model.layers, model.unpack()):
        y = _activate(h @ W + b, layer.activation)
        trace.append((h, y))
        h = y
    return h, trace


def forward(model: ModelParams, x: np.ndarray) -> np.ndarray:
    x = _check_input(model, x)
    h = x
    for layer, (W, b) in zip(model.layers, model.unpack()):
        h = _activate(h @ W + b, layer.activation)
    return h


def _backward_trace(model: ModelParams, trace, grad_out: np.ndarray,
                    input_grad: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """Backprop ``dL/d(output)`` through the recorded trace.

    Returns (flat parameter gradient, gradient w.r.t. the network input or None).
    """
    flat = np.empty(model.weights.size)
    g = grad_out
    views = model.unpack()
    offsets = _offsets(model.layers)
    for k in range(len(model.layers) - 1, -1, -1):
        act = model.layers[k].activation
        h_in, y = trace[k]
        if act is Activation.TANH:
            g = g * (1.0 - y * y)
        elif act is Activation.SIGMOID:
            g = g * y * (1.0 - y)
        w0, w1, b1 = offsets[k]
        np.dot(h_in.T, g, out=flat[w0:w1].reshape(h_in.shape[1], g.shape[1]))
        g.sum(axis=0, out=flat[w1:b1])
        if k or input_grad:
            g = g @ views[k][0].T
    return flat, g if input_grad else None


# --------------------------------------------------------------------------- losses


def _require_prob_head(d: ModelParams):
    if d.layers[-1].activation is not Activation.SIGMOID or d.output_size != 1:
        raise ConfigError("discriminator must end in a single sigmoid unit")


def _clamped(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Clamp to [EPS, 1-EPS]; the mask marks entries whose derivative survives."""
    inside = (p > EPS) & (p < 1.0 - EPS)
    return np.clip(p, EPS, 1.0 - EPS), inside


def discriminator_output(d: ModelParams, x: np.ndarray) -> np.ndarray:
    """D(x) clamped into [EPS, 1-EPS], shape (n,)."""
    _require_prob_head(d)
    return _clamped(forward(d, x)[:, 0])[0]


def discriminator_loss(d: ModelParams, real: np.ndarray, fake: np.ndarray) -> float:
    """-(mean log D(real) + mean log(1 - D(fake)))."""
    if len(real) == 0 or len(fake) == 0:
        raise ConfigError("loss batches must be non-empty")
    p_real = discriminator_output(d, real)
    p_fake = discriminator_output(d, fake)
    return float(-(np.mean(np.log(p_real)) + np.mean(np.log(1.0 - p_fake))))


def generator_loss(g: ModelParams, d: ModelParams, z: np.ndarray) -> float:
    """0.5 * mean log(1 - D(G(z))); the generator minimizes it."""
    if len(z) == 0:
        raise ConfigError("latent batch must be non-empty")
    if g.output_size != d.input_size:
        raise ConfigError(f"generator emits {g.output_size} dims, discriminator expects {d.input_size}")
    p = discriminator_output(d, forward(g, z))
    return float(0.5 * np.mean(np.log(1.0 - p)))


def discriminator_grad(d: ModelParams, real: np.ndarray, fake: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and gradient of :func:`discriminator_loss` w.r.t. ``d``'s weights."""
    _require_prob_head(d)
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    n_r, n_f = len(real), len(fake)
    if n_r == 0 or n_f == 0:
        raise ConfigError("loss batches must be non-empty")
    out, trace = _forward_trace(d, np.concatenate([real, fake]))
    p, inside = _clamped(out[:, 0])
    loss = -(np.mean(np.log(p[:n_r])) + np.mean(np.log(1.0 - p[n_r:])))
    dldp = np.concatenate([-1.0 / (p[:n_r] * n_r), 1.0 / ((1.0 - p[n_r:]) * n_f)])
    grad, _ = _backward_trace(d, trace, (dldp * inside)[:, None], input_grad=False)
    return float(loss), grad


def generator_grad(g: ModelParams, d: ModelParams, z: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and gradient of :func:`generator_loss` w.r.t. ``g`` only; ``d`` is frozen."""
    _require_prob_head(d)
    z = np.asarray(z, dtype=np.float64)
    if len(z) == 0:
        raise ConfigError("latent batch must be non-empty")
    if g.output_size != d.input_size:
        raise ConfigError(f"generator emits {g.output_size} dims, discriminator expects {d.input_size}")
    fake, g_trace = _forward_trace(g, z)
    out, d_trace = _forward_trace(d, fake)
    p, inside = _clamped(out[:, 0])
    n = len(z)
    loss = 0.5 * np.mean(np.log(1.0 - p))
    dldp = -0.5 / ((1.0 - p) * n)
    _, dfake = _backward_trace(d, d_trace, (dldp * inside)[:, None])
    grad, _ = _backward_trace(g, g_trace, dfake, input_grad=False)
    return float(loss), grad


# --------------------------------------------------------------------------- updates


def sgd_step(model: ModelParams, grad: np.ndarray, learning_rate: float) -> ModelParams:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.weights.shape:
        raise ConfigError(f"gradient length {grad.size} != parameter length {model.weights.size}")
    with np.errstate(over="ignore", invalid="ignore"):
        new = model.weights - learning_rate * grad
    if not np.all(np.isfinite(new)):
        raise TrainingError("SGD step produced non-finite weights")
    return model._replaced(new)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def adam_step(model: ModelParams, grad: np.ndarray, learning_rate: float, state: AdamState) -> ModelParams:
    """Bias-corrected Adam update; ``state`` is advanced in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != model.weights.shape:
        raise ConfigError(f"gradient length {grad.size} != parameter length {model.weights.size}")
    if state.m is None:
        state.m = np.zeros_like(grad)
        state.v = np.zeros_like(grad)
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    with np.errstate(over="ignore", invalid="ignore"):
        new = model.weights - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(new)):
        raise TrainingError("Adam step produced non-finite weights")
    return model._replaced(new)


class Optimizer:
    """Per-model update rule: ``"adam"`` keeps moment state, ``"sgd"`` is stateless."""

    def __init__(self, kind: str = "adam"):
        if kind not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.state = AdamState() if kind == "adam" else None

    def step(self, model: ModelParams, grad: np.ndarray, learning_rate: float) -> ModelParams:
        if self.state is None:
            return sgd_step(model, grad, learning_rate)
        return adam_step(model, grad, learning_rate, self.state)
