"""Flat-parameter MLP engine: forward pass, analytic backprop, SGD and Adam.

The whole model lives in one float64 vector using a canonical layer-major
layout (per layer: row-major (in, out) weight matrix, then bias). Update
arithmetic and per-coordinate aggregation elsewhere in the package rely on
that fixed layout.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import InputError


@dataclass(frozen=True)
class ModelSpec:
    """MLP architecture: input dim, hidden dims..., class count.

    Hidden layers use relu; the output layer is softmax.
    """

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise InputError("layer_sizes needs at least input dim and class count")
        if any(s <= 0 for s in self.layer_sizes):
            raise InputError(f"layer_sizes must be positive, got {self.layer_sizes}")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        sizes = self.layer_sizes
        return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))

    def layer_slices(self):
        """Yield (weight_slice, bias_slice, in_dim, out_dim) per layer."""
        offset = 0
        sizes = self.layer_sizes
        for i in range(len(sizes) - 1):
            n_in, n_out = sizes[i], sizes[i + 1]
            w = slice(offset, offset + n_in * n_out)
            offset += n_in * n_out
            b = slice(offset, offset + n_out)
            offset += n_out
            yield w, b, n_in, n_out


def init_params(spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform init in +-sqrt(6/(fan_in+fan_out)) per layer, zero biases."""
    params = np.zeros(spec.param_count)
    for w, b, n_in, n_out in spec.layer_slices():
        bound = np.sqrt(6.0 / (n_in + n_out))
        params[w] = rng.uniform(-bound, bound, size=n_in * n_out)
        params[b] = 0.0
    return params


def _check_params(spec: ModelSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.param_count,):
        raise InputError(
            f"parameter vector has length {params.shape}, expected ({spec.param_count},)")
    return params


def _as_batch(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise InputError(f"feature shape {x.shape} does not match input dim {spec.input_dim}")
    return x


def _logits(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
            keep_activations: bool = False):
    """Forward pass up to the pre-softmax logits.

    Returns (logits, activations) where activations[l] is the input to
    layer l (needed by backprop).
    """
    activations = [x]
    h = x
    layers = list(spec.layer_slices())
    for li, (w, b, n_in, n_out) in enumerate(layers):
        z = h @ params[w].reshape(n_in, n_out) + params[b]
        if li < len(layers) - 1:
            h = np.maximum(z, 0.0)
            activations.append(h)
        else:
            h = z
    return (h, activations) if keep_activations else (h, None)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def forward(spec: ModelSpec, params: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Class-probability vector(s) for one sample or a batch.

    A 1-D input yields a length-C probability vector; a 2-D batch yields
    one row per sample.
    """
    params = _check_params(spec, params)
    batch = _as_batch(spec, x)
    z, _ = _logits(spec, params, batch)
    probs = np.exp(_log_softmax(z))
    return probs[0] if np.asarray(x).ndim == 1 else probs


def _check_batch(spec: ModelSpec, params, x, y):
    params = _check_params(spec, params)
    x = _as_batch(spec, x)
    y = np.asarray(y, dtype=int)
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise InputError(f"labels shape {y.shape} does not match batch of {x.shape[0]}")
    if x.shape[0] == 0:
        raise InputError("empty batch")
    if y.min(initial=0) < 0 or y.max(initial=0) >= spec.class_count:
        raise InputError(f"labels must lie in [0, {spec.class_count})")
    return params, x, y


def cross_entropy_loss(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
                       y: np.ndarray) -> float:
    """Mean -log p(label) over the batch."""
    params, x, y = _check_batch(spec, params, x, y)
    z, _ = _logits(spec, params, x)
    logp = _log_softmax(z)
    return float(-logp[np.arange(len(y)), y].mean())


def gradient(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
             y: np.ndarray) -> np.ndarray:
    """Analytic gradient of the mean batch cross-entropy, flat layout."""
    params, x, y = _check_batch(spec, params, x, y)
    z, activations = _logits(spec, params, x, keep_activations=True)
    probs = np.exp(_log_softmax(z))
    n = x.shape[0]
    delta = probs
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad = np.zeros_like(params)
    layers = list(spec.layer_slices())
    for li in range(len(layers) - 1, -1, -1):
        w, b, n_in, n_out = layers[li]
        a_in = activations[li]
        grad[w] = (a_in.T @ delta).ravel()
        grad[b] = delta.sum(axis=0)
        if li > 0:
            delta = delta @ params[w].reshape(n_in, n_out).T
            delta[activations[li] <= 0.0] = 0.0
    return grad


@dataclass(frozen=True)
class OptimizerState:
    """SGD or Adam state. Moment vectors are unused for SGD."""

    kind: str  # "sgd" | "adam"
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: np.ndarray | None = None
    second_moment: np.ndarray | None = None


def make_optimizer(kind: str, learning_rate: float, param_count: int, *,
                   beta1: float = 0.9, beta2: float = 0.999,
                   epsilon: float = 1e-8) -> OptimizerState:
    if kind not in ("sgd", "adam"):
        raise InputError(f"unknown optimizer kind {kind!r}")
    if learning_rate < 0:
        raise InputError("learning_rate must be >= 0")
    if kind == "adam":
        return OptimizerState(kind, learning_rate, beta1, beta2, epsilon, 0,
                              np.zeros(param_count), np.zeros(param_count))
    return OptimizerState(kind, learning_rate)


def optimizer_step(state: OptimizerState, params: np.ndarray,
                   grad: np.ndarray) -> tuple[np.ndarray, OptimizerState]:
    """One update step; returns (new params, new state), inputs untouched."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape:
        raise InputError(f"gradient shape {grad.shape} != params shape {params.shape}")
    if not np.all(np.isfinite(grad)):
        raise InputError("gradient contains non-finite entries")

    if state.kind == "sgd":
        return params - state.learning_rate * grad, state

    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad ** 2
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, step_count=t, first_moment=m, second_moment=v)


def accuracy(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
             y: np.ndarray) -> float:
    """Classification accuracy in percent."""
    params, x, y = _check_batch(spec, params, x, y)
    z, _ = _logits(spec, params, x)
    return float((z.argmax(axis=1) == y).mean() * 100.0)


def confidences(spec: ModelSpec, params: np.ndarray, x: np.ndarray,
                targets: Sequence[int]) -> np.ndarray:
    """Softmax probability assigned to targets[i] for each sample i."""
    probs = forward(spec, params, _as_batch(spec, x))
    return probs[np.arange(len(targets)), np.asarray(targets, dtype=int)]
