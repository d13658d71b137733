"""Fully connected tanh network with softmax output, kept as one flat parameter vector.

Layout of the flat vector: for each layer, the weight matrix (fan_in x fan_out,
row-major) followed by its bias vector.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


class NumericError(ArithmeticError):
    """Non-finite activations, losses or parameters."""


@dataclass(frozen=True)
class ModelParams:
    values: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        shape = tuple(int(d) for d in self.shape)
        if len(shape) < 2 or any(d < 1 for d in shape):
            raise ValueError(f"invalid layer shape {shape}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size != n_params(shape):
            raise ValueError(f"expected {n_params(shape)} values for shape {shape}, got {values.size}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _unflatten(self.values, self.shape)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


class Batch(NamedTuple):
    inputs: np.ndarray
    labels: np.ndarray


@dataclass
class HyperParams:
    lr: float = 1e-2
    local_epochs: int = 1
    rounds: int = 100
    pretrain_rounds: int = 50
    intra_rounds: int = 2
    batch_size: int = 20
    share_ratio: float = 0.05

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        for name in ("local_epochs", "rounds", "pretrain_rounds"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("intra_rounds", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.share_ratio <= 1.0:
            raise ValueError(f"share_ratio must lie in [0, 1], got {self.share_ratio}")


def n_params(shape: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(shape[:-1], shape[1:]))


def _unflatten(flat: np.ndarray, shape: Sequence[int]) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    off = 0
    for a, b in zip(shape[:-1], shape[1:]):
        W = flat[off:off + a * b].reshape(a, b)
        off += a * b
        out.append((W, flat[off:off + b]))
        off += b
    return out


def init_model(shape: Sequence[int], seed: int | np.random.Generator) -> ModelParams:
    """Uniform(-sqrt(3/fan_in), sqrt(3/fan_in)) weights, zero biases."""
    shape = tuple(int(d) for d in shape)
    if len(shape) < 2:
        raise ValueError("a model needs at least an input and an output layer")
    if any(d < 1 for d in shape):
        raise ValueError(f"zero-dimension layer in {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flat = np.zeros(n_params(shape))
    for W, _ in _unflatten(flat, shape):
        limit = np.sqrt(3.0 / W.shape[0])
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return ModelParams(flat, shape)


def _xy(batch):
    if hasattr(batch, "inputs"):
        return batch.inputs, batch.labels
    X, y = batch
    return X, y


def _check_batch(shape, batch):
    X, y = _xy(batch)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise ValueError(f"inputs must be a non-empty 2-D matrix, got shape {X.shape}")
    if X.shape[1] != shape[0]:
        raise ValueError(f"inputs have {X.shape[1]} features, model expects {shape[0]}")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must be a vector with one entry per input row")
    if y.min() < 0 or y.max() >= shape[-1]:
        raise ValueError(f"labels must lie in [0, {shape[-1]})")
    return X, y


def _forward(layers, X):
    acts = [X]
    h = X
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = layers[-1]
    logits = h @ W + b
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite activation")
    return acts, logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def predict_proba(params: ModelParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    _, logits = _forward(params.layers(), X)
    return np.exp(log_softmax(logits))


def _loss_and_grad(flat: np.ndarray, shape, X, y, want_grad=True):
    layers = _unflatten(flat, shape)
    acts, logits = _forward(layers, X)
    logp = log_softmax(logits)
    n = X.shape[0]
    loss = -logp[np.arange(n), y].mean()
    if not want_grad:
        return loss, None
    grad = np.empty_like(flat)
    gl = _unflatten(grad, shape)
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n
    for i in range(len(layers) - 1, -1, -1):
        gW, gb = gl[i]
        gW[...] = acts[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i:
            delta = (delta @ layers[i][0].T) * (1.0 - acts[i] ** 2)
    return loss, grad


def loss(params: ModelParams, batch) -> float:
    """Mean cross-entropy of the true classes."""
    X, y = _check_batch(params.shape, batch)
    value, _ = _loss_and_grad(params.values, params.shape, X, y, want_grad=False)
    if not np.isfinite(value):
        raise NumericError("non-finite loss")
    return float(value)


def gradient(params: ModelParams, batch) -> np.ndarray:
    X, y = _check_batch(params.shape, batch)
    _, grad = _loss_and_grad(params.values, params.shape, X, y)
    return grad


def sgd_step(params: ModelParams, grad: np.ndarray, lr: float) -> ModelParams:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ValueError(f"gradient length {grad.size} does not match {len(params)} parameters")
    return ModelParams(params.values - lr * grad, params.shape)


def local_train(params: ModelParams, data, epochs: int, lr: float, batch_size: int,
                rng: np.random.Generator) -> ModelParams:
    """Mini-batch SGD over ``epochs`` shuffled passes.

    ``batch_size`` larger than the dataset is clamped to the dataset size.
    """
    X, y = _check_batch(params.shape, data)
    if epochs <= 0:
        return params
    n = X.shape[0]
    bs = max(1, min(int(batch_size), n))
    flat = params.values.copy()
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            _, g = _loss_and_grad(flat, params.shape, X[idx], y[idx])
            flat -= lr * g
    if not np.all(np.isfinite(flat)):
        raise NumericError("parameters diverged during local training")
    return ModelParams(flat, params.shape)


def weighted_merge(new: ModelParams, prev: ModelParams, weight: float) -> ModelParams:
    """``weight * new + (1 - weight) * prev``."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"merge weight must lie in [0, 1], got {weight}")
    if new.shape != prev.shape:
        raise ValueError(f"shape mismatch {new.shape} vs {prev.shape}")
    return ModelParams(weight * new.values + (1.0 - weight) * prev.values, new.shape)


def evaluate(params: ModelParams, data) -> tuple[float, float]:
    """(accuracy, mean cross-entropy) on a labelled set."""
    X, y = _check_batch(params.shape, data)
    _, logits = _forward(params.layers(), X)
    logp = log_softmax(logits)
    acc = float(np.mean(logits.argmax(axis=1) == y))
    return acc, float(-logp[np.arange(len(y)), y].mean())


def save_params(params: ModelParams, path: str | Path, seed: int | None = None) -> None:
    """Little-endian binary: int32 layer count, int32 dims, float64 values; plus a JSON sidecar."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack(f"<i{len(params.shape)}i", len(params.shape), *params.shape))
        fh.write(params.values.astype("<f8").tobytes())
    sidecar = {"shape": list(params.shape), "seed": seed, "n_params": len(params)}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_params(path: str | Path) -> ModelParams:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError("truncated parameter file")
    (n_layers,) = struct.unpack_from("<i", raw, 0)
    shape = struct.unpack_from(f"<{n_layers}i", raw, 4)
    body = raw[4 + 4 * n_layers:]
    if len(body) != 8 * n_params(shape):
        raise ValueError(f"parameter file holds {len(body) // 8} values, shape {shape} needs {n_params(shape)}")
    return ModelParams(np.frombuffer(body, dtype="<f8").astype(np.float64), shape)
