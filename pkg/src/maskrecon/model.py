"""Small fully connected classifier with hand-rolled forward/backward passes,
softmax cross-entropy, momentum SGD, and a versioned binary checkpoint format.

Weight matrices are stored (fan_in, fan_out); inputs are flat row vectors.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CheckpointFormatError,
    CorruptCheckpointError,
    InvalidRangeError,
    NumericalError,
    ShapeError,
)
from .masking import rng_from_seed

__all__ = [
    "ClassifierParams",
    "Gradients",
    "Classifier",
    "init_params",
    "forward",
    "loss_and_grad",
    "sgd_step",
    "zero_velocity",
    "save_checkpoint",
    "load_checkpoint",
]

_MAGIC = b"MRCK"
_VERSION = 1


@dataclass(frozen=True)
class ClassifierParams:
    """Immutable snapshot of the network: one (fan_in, fan_out) weight matrix
    and one bias vector per layer; rectified-linear hidden activations."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} mismatch")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i}: input size {w.shape[0]} does not chain from previous "
                    f"output {self.weights[i - 1].shape[1]}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericalError(f"layer {i} has non-finite parameters")

    @property
    def layer_sizes(self) -> tuple:
        return tuple([self.weights[0].shape[0]] + [w.shape[1] for w in self.weights])

    @property
    def classes(self) -> int:
        return self.weights[-1].shape[1]


@dataclass(frozen=True)
class Gradients:
    """Parameter gradients plus the gradient with respect to the input."""

    d_weights: tuple
    d_biases: tuple
    d_input: np.ndarray


def init_params(layer_sizes, seed: int) -> ClassifierParams:
    """Seeded uniform init scaled by 1/sqrt(fan_in); zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ShapeError(f"layer_sizes needs >= 2 positive entries, got {sizes}")
    rng = rng_from_seed(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ClassifierParams(weights=tuple(weights), biases=tuple(biases))


def _as_batch(x, params: ClassifierParams):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != params.weights[0].shape[0]:
        raise ShapeError(
            f"input shape {x.shape} does not match model input size "
            f"{params.weights[0].shape[0]}"
        )
    return batch, single


def _forward_cached(params: ClassifierParams, batch: np.ndarray):
    """Returns (logits, pre-activations per layer, activations per layer)."""
    pre, act = [], [batch]
    h = batch
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        act.append(h)
    return h, pre, act


def forward(params: ClassifierParams, x) -> np.ndarray:
    """Logits for a single flat input (d,) or a batch (B, d)."""
    batch, single = _as_batch(x, params)
    logits, _, _ = _forward_cached(params, batch)
    return logits[0] if single else logits


def _check_labels(labels, classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidRangeError(f"labels must be integers, got dtype {labels.dtype}")
    if labels.min() < 0 or labels.max() >= classes:
        raise InvalidRangeError(
            f"labels must lie in [0, {classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels


def loss_and_grad(params: ClassifierParams, x, label):
    """Mean softmax cross-entropy and exact gradients (parameters and input).

    Accepts a single example ((d,), int) or a batch ((B, d), (B,)).
    """
    batch, single = _as_batch(x, params)
    labels = _check_labels([label] if single else label, params.classes)
    if labels.shape[0] != batch.shape[0]:
        raise ShapeError(f"{batch.shape[0]} inputs but {labels.shape[0]} labels")

    logits, pre, act = _forward_cached(params, batch)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = batch.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), labels] + 1e-300)))

    delta = probs.copy()
    delta[np.arange(n), labels] -= 1.0
    delta /= n
    d_weights = [None] * len(params.weights)
    d_biases = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        d_weights[i] = act[i].T @ delta
        d_biases[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0.0)
        else:
            delta = delta @ params.weights[0].T
    d_input = delta[0] if single else delta
    return loss, Gradients(
        d_weights=tuple(d_weights), d_biases=tuple(d_biases), d_input=d_input
    )


def zero_velocity(params: ClassifierParams):
    return (
        tuple(np.zeros_like(w) for w in params.weights),
        tuple(np.zeros_like(b) for b in params.biases),
    )


def sgd_step(params: ClassifierParams, grads: Gradients, lr: float, momentum: float, velocity=None):
    """One momentum-SGD update: v <- momentum*v + g; p <- p - lr*v.

    Returns (new params, new velocity). Pass the returned velocity back in on
    the next call; None starts from zero velocity.
    """
    if lr <= 0:
        raise InvalidRangeError(f"learning rate must be > 0, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise InvalidRangeError(f"momentum must be in [0, 1), got {momentum}")
    for g in list(grads.d_weights) + list(grads.d_biases):
        if not np.all(np.isfinite(g)):
            raise NumericalError("update rejected: non-finite gradient")
    vel_w, vel_b = zero_velocity(params) if velocity is None else velocity
    new_vel_w = tuple(momentum * v + g for v, g in zip(vel_w, grads.d_weights))
    new_vel_b = tuple(momentum * v + g for v, g in zip(vel_b, grads.d_biases))
    new_w = tuple(w - lr * v for w, v in zip(params.weights, new_vel_w))
    new_b = tuple(b - lr * v for b, v in zip(params.biases, new_vel_b))
    return ClassifierParams(weights=new_w, biases=new_b), (new_vel_w, new_vel_b)


def save_checkpoint(params: ClassifierParams, path) -> None:
    """Little-endian binary: magic, version, layer count, shape table, float64 data."""
    sizes = params.layer_sizes
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(params.weights)))
        f.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w, b in zip(params.weights, params.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> ClassifierParams:
    with open(path, "rb") as f:
        blob = f.read()

    def take(n, what):
        nonlocal offset
        if offset + n > len(blob):
            raise CorruptCheckpointError(f"checkpoint truncated while reading {what}")
        out = blob[offset: offset + n]
        offset = offset + n
        return out

    offset = 0
    magic = take(4, "magic")
    if magic != _MAGIC:
        raise CheckpointFormatError(f"bad checkpoint magic {magic!r}, expected {_MAGIC!r}")
    version, n_layers = struct.unpack("<II", take(8, "header"))
    if version != _VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    if n_layers < 1:
        raise CorruptCheckpointError("checkpoint declares zero layers")
    sizes = struct.unpack(f"<{n_layers + 1}I", take(4 * (n_layers + 1), "shape table"))
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = np.frombuffer(take(8 * fan_in * fan_out, "weights"), dtype="<f8")
        b = np.frombuffer(take(8 * fan_out, "biases"), dtype="<f8")
        weights.append(w.reshape(fan_in, fan_out).copy())
        biases.append(b.copy())
    if offset != len(blob):
        raise CorruptCheckpointError(
            f"{len(blob) - offset} trailing bytes after checkpoint payload"
        )
    return ClassifierParams(weights=tuple(weights), biases=tuple(biases))


class Classifier:
    """Thin stateful wrapper giving attacks and the pipeline a uniform surface."""

    def __init__(self, params: ClassifierParams):
        self.params = params

    @property
    def classes(self) -> int:
        return self.params.classes

    def logits(self, x_flat) -> np.ndarray:
        return forward(self.params, x_flat)

    def predict(self, x_flat) -> int:
        return int(np.argmax(forward(self.params, x_flat)))

    def predict_batch(self, x_batch) -> np.ndarray:
        return np.argmax(forward(self.params, x_batch), axis=1)

    def loss_and_input_grad(self, x_flat, label):
        loss, grads = loss_and_grad(self.params, x_flat, label)
        return loss, grads.d_input
