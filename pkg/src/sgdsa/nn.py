"""Fully connected networks over a flat float64 parameter vector.

Packing (version 1): for each affine layer in order, the weight matrix of
shape ``(fan_in, fan_out)`` in row-major order, then its ``fan_out`` biases.
Logits for a batch ``X`` are ``h @ W + b`` with ``h`` the previous layer's
activation; hidden layers apply relu or tanh, the last layer is linear and
feeds a softmax cross-entropy loss averaged over the batch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import RngState

PACKING_VERSION = 1
CHECKPOINT_MAGIC = b"SGDSACK1"

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and an output size")
        if any(s <= 0 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))

    def slices(self) -> list[tuple[slice, slice, tuple[int, int]]]:
        """(weight slice, bias slice, weight shape) for every layer."""
        out = []
        offset = 0
        s = self.layer_sizes
        for i in range(len(s) - 1):
            fan_in, fan_out = s[i], s[i + 1]
            w_end = offset + fan_in * fan_out
            b_end = w_end + fan_out
            out.append((slice(offset, w_end), slice(w_end, b_end), (fan_in, fan_out)))
            offset = b_end
        return out

    def unpack(self, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        w = _check_params(self, w)
        return [(w[ws].reshape(shape), w[bs]) for ws, bs, shape in self.slices()]

    # objective interface used by the optimizers
    def loss(self, w: np.ndarray, batch) -> float:
        return loss(forward(self, w, batch.inputs), batch.targets)

    def loss_and_gradient(self, w: np.ndarray, batch) -> tuple[float, np.ndarray]:
        return loss_and_gradient(self, w, batch)


def _check_params(spec: NetworkSpec, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != spec.n_params:
        raise ValueError(f"parameter vector has shape {w.shape}, expected ({spec.n_params},)")
    return w


def _check_inputs(spec: NetworkSpec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.n_inputs:
        raise ValueError(f"inputs have shape {x.shape}, expected (batch, {spec.n_inputs})")
    return x


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n_rows:
        raise ValueError(f"expected {n_rows} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be integer class indices")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"label out of range [0, {n_classes})")
    return y


def init_weights(spec: NetworkSpec, rng: RngState) -> np.ndarray:
    """He-normal weights for relu (variance 2/fan_in), 1/fan_in for tanh; zero biases."""
    w = np.zeros(spec.n_params)
    gain = 2.0 if spec.activation == "relu" else 1.0
    for ws, _, (fan_in, fan_out) in spec.slices():
        w[ws] = rng.normal(fan_in * fan_out) * np.sqrt(gain / fan_in)
    return w


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _forward_trace(spec: NetworkSpec, w: np.ndarray, x: np.ndarray):
    layers = spec.unpack(w)
    acts = [x]
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        if i < len(layers) - 1:
            h = _act(spec.activation, z)
            acts.append(h)
        else:
            h = z
    return layers, acts, h


def forward(spec: NetworkSpec, w: np.ndarray, inputs) -> np.ndarray:
    x = _check_inputs(spec, inputs)
    return _forward_trace(spec, w, x)[2]


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(logits, labels) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("logits must be a non-empty (batch, classes) matrix")
    y = _check_labels(labels, z.shape[0], z.shape[1])
    logp = _log_softmax(z)
    return float(-logp[np.arange(len(y)), y].mean())


def accuracy(logits, labels) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("logits must be a non-empty (batch, classes) matrix")
    y = _check_labels(labels, z.shape[0], z.shape[1])
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return float(np.mean(z.argmax(axis=1) == y))


def loss_and_gradient(spec: NetworkSpec, w: np.ndarray, batch) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over ``batch`` and its exact gradient."""
    w = _check_params(spec, w)
    x = _check_inputs(spec, batch.inputs)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    y = _check_labels(batch.targets, x.shape[0], spec.n_classes)
    n = x.shape[0]

    layers, acts, logits = _forward_trace(spec, w, x)
    logp = _log_softmax(logits)
    value = float(-logp[np.arange(n), y].mean())

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    grad = np.empty_like(w)
    slices = spec.slices()
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        ws, bs, _ = slices[i]
        h = acts[i]
        grad[ws] = (h.T @ delta).ravel()
        grad[bs] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ W.T
            if spec.activation == "relu":
                delta *= h > 0
            else:
                delta *= 1.0 - h * h
    return value, grad


def save_checkpoint(path, spec: NetworkSpec, w: np.ndarray, meta: dict | None = None) -> None:
    """Write ``magic | u32 header length | JSON header | float64 LE params``."""
    w = _check_params(spec, w)
    header = {
        "packing_version": PACKING_VERSION,
        "layer_sizes": list(spec.layer_sizes),
        "activation": spec.activation,
        "n_params": spec.n_params,
    }
    header.update(meta or {})
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(w.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[NetworkSpec, np.ndarray, dict]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    if header.get("packing_version") != PACKING_VERSION:
        raise ValueError(f"{path}: unsupported packing version {header.get('packing_version')}")
    spec = NetworkSpec(tuple(header["layer_sizes"]), header["activation"])
    raw = data[12 + hlen:]
    if len(raw) != 8 * spec.n_params:
        raise ValueError(f"{path}: expected {spec.n_params} parameters, found {len(raw) // 8}")
    w = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return spec, w, header
