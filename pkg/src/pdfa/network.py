"""Fully-connected network with biases folded into the weight matrices.

Layer ``l`` holds ``W[l]`` of shape ``(n_l, n_{l-1} + 1)``; the last column
multiplies a constant 1 appended to the layer input. The output layer is
linear and paired with a softmax cross-entropy loss.
"""

from __future__ import annotations

import enum
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .linalg import DTYPE, make_rng


class Activation(enum.Enum):
    TANH = "tanh"
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"  # output layer, softmax folded into the loss

    @property
    def gamma_max(self) -> float:
        """Supremum of ``|phi'|`` over the reals."""
        return 0.25 if self is Activation.SIGMOID else 1.0

    def gamma_min(self, radius: float = math.inf) -> float:
        """Infimum of ``|phi'(z)|`` over ``|z| <= radius``."""
        if self is Activation.IDENTITY:
            return 1.0
        if self is Activation.RELU:
            return 0.0
        if math.isinf(radius):
            return 0.0
        return float(derivative(self, np.array([radius]))[0])


def apply(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.SIGMOID:
        return 0.5 * (1.0 + np.tanh(0.5 * z))
    return np.array(z, dtype=DTYPE, copy=True)


def derivative(kind: Activation, z) -> np.ndarray:
    """Coordinate-wise ``phi'(z)``. ReLU uses 0 at exactly 0."""
    z = np.asarray(z, dtype=DTYPE)
    if kind is Activation.TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    if kind is Activation.RELU:
        return (z > 0).astype(DTYPE)
    if kind is Activation.SIGMOID:
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        return s * (1.0 - s)
    return np.ones_like(z)


def with_bias(h: np.ndarray) -> np.ndarray:
    """Append the constant-1 bias input along the last axis."""
    ones = np.ones(h.shape[:-1] + (1,), dtype=DTYPE)
    return np.concatenate([h, ones], axis=-1)


@dataclass
class ForwardTrace:
    z: list  # z[l-1] is the pre-activation of layer l
    h: list  # h[0] is the input, h[l] the activation of layer l

    @property
    def logits(self) -> np.ndarray:
        return self.z[-1]

    @property
    def yhat(self) -> np.ndarray:
        return self.h[-1]


class Network:
    def __init__(self, weights: Sequence[np.ndarray], activations: Sequence[Activation]):
        if len(weights) != len(activations) or not weights:
            raise ValueError("need one activation per layer and at least one layer")
        widths = [weights[0].shape[1] - 1]
        for i, W in enumerate(weights):
            if W.ndim != 2 or W.shape[1] != widths[-1] + 1:
                raise ValueError(f"layer {i + 1} has shape {W.shape}, expected (*, {widths[-1] + 1})")
            widths.append(W.shape[0])
        self.weights = [np.array(W, dtype=DTYPE) for W in weights]
        self.activations = [Activation(a) for a in activations]
        self.widths = tuple(widths)

    @classmethod
    def init(cls, widths: Sequence[int], hidden: Activation | str = Activation.TANH, seed: int = 0):
        """Gaussian weights with std ``1/sqrt(fan_in)``, zero biases, linear output layer."""
        widths = [int(w) for w in widths]
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"invalid widths {widths}")
        rng = make_rng(seed)
        weights = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            W = np.zeros((fan_out, fan_in + 1), dtype=DTYPE)
            W[:, :-1] = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_out, fan_in))
            weights.append(W)
        acts = [Activation(hidden)] * (len(widths) - 2) + [Activation.IDENTITY]
        return cls(weights, acts)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "Network":
        return Network([W.copy() for W in self.weights], list(self.activations))

    def forward(self, x) -> ForwardTrace:
        """Forward pass for a single input vector or a batch (one row per sample)."""
        h = np.asarray(x, dtype=DTYPE)
        if h.shape[-1] != self.widths[0]:
            raise ValueError(f"input has width {h.shape[-1]}, network expects {self.widths[0]}")
        zs, hs = [], [h]
        for W, act in zip(self.weights, self.activations):
            z = with_bias(h) @ W.T
            h = apply(act, z)
            zs.append(z)
            hs.append(h)
        return ForwardTrace(zs, hs)

    def predict_logits(self, X, chunk: int = 4096) -> np.ndarray:
        X = np.asarray(X, dtype=DTYPE)
        if X.ndim == 1:
            return self.forward(X).logits
        return np.concatenate([self.forward(X[i:i + chunk]).logits
                               for i in range(0, X.shape[0], chunk)], axis=0)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape + (num_classes,), dtype=DTYPE)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


def loss_and_error(logits, y) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its gradient ``softmax(logits) - y`` w.r.t. the logits.

    ``y`` must be one-hot (per row for a batch). The loss is averaged over rows.
    """
    logits = np.asarray(logits, dtype=DTYPE)
    y = np.asarray(y, dtype=DTYPE)
    if logits.shape != y.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape}, targets {y.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=-1) == 1)):
        raise ValueError("targets must be one-hot")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    loss = float(-np.mean(np.sum(y * log_p, axis=-1)))
    return loss, np.exp(log_p) - y


def accuracy(net: Network, X, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy of an empty dataset is undefined")
    pred = np.argmax(net.predict_logits(X), axis=-1)
    return float(np.mean(pred == labels))


# Checkpoint container: magic, version, layer count, then per layer
# (rows, cols, activation code) followed by rows*cols little-endian float64.
_MAGIC = b"PDFANET\x00"
_VERSION = 1
_ACT_CODES = {a: i for i, a in enumerate(Activation)}


def save_checkpoint(net: Network, path, metadata: dict | None = None) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, net.n_layers))
        for W, act in zip(net.weights, net.activations):
            f.write(struct.pack("<IIB", W.shape[0], W.shape[1], _ACT_CODES[act]))
        for W in net.weights:
            f.write(W.astype("<f8").tobytes(order="C"))
    if metadata is not None:
        Path(str(path) + ".json").write_text(json.dumps(metadata, indent=2, sort_keys=True))


def load_checkpoint(path) -> Network:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    version, n_layers = struct.unpack_from("<II", data, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 16
    shapes, acts = [], []
    codes = list(Activation)
    for _ in range(n_layers):
        rows, cols, code = struct.unpack_from("<IIB", data, pos)
        pos += 9
        shapes.append((rows, cols))
        acts.append(codes[code])
    weights = []
    for rows, cols in shapes:
        nbytes = rows * cols * 8
        if pos + nbytes > len(data):
            raise ValueError("truncated checkpoint")
        weights.append(np.frombuffer(data, dtype="<f8", count=rows * cols, offset=pos)
                       .reshape(rows, cols).astype(DTYPE))
        pos += nbytes
    return Network(weights, acts)
