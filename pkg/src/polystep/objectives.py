"""Benchmark objectives: smooth references, piecewise-constant landscapes,
and a tiny MLP with hard non-differentiable forward variants.

Every objective is a deterministic pure function of the parameter vector
(and a fixed dataset batch), so optimizer runs replay bit-for-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from polystep.subspace import LayerShape

__all__ = [
    "Objective",
    "DatasetHandle",
    "TinyMLP",
    "IdxFormatError",
    "quadratic",
    "sphere_indicator",
    "staircase1d",
    "mlp_loss",
    "make_blobs",
    "load_idx",
    "load_idx_images",
    "cross_entropy",
]

SMOOTH = "smooth"
PIECEWISE_SMOOTH = "piecewise_smooth"
PIECEWISE_CONSTANT = "piecewise_constant"

ACTIVATIONS = ("relu", "sign", "int8_round", "staircase_floor", "argmax_route")


@dataclass
class Objective:
    """A scalar loss over R^dim.

    ``eval_many`` is an optional vectorized path taking an (N, dim) batch;
    ``on_center_update`` is an optional hook the optimizer calls with the
    new center parameters after each step (used by incremental evaluators).
    """

    name: str
    dim: int
    eval_fn: object
    smoothness: str = SMOOTH
    eval_many: object = None
    layer_shapes: list = field(default_factory=list)
    on_center_update: object = None

    def __call__(self, theta):
        return self.eval_fn(np.asarray(theta, dtype=float))


@dataclass
class DatasetHandle:
    """In-memory dataset: rows of features plus integer labels."""

    inputs: np.ndarray
    labels: np.ndarray | None
    n_classes: int = 0
    split: str = "train"

    def __post_init__(self):
        if self.labels is not None and len(self.labels):
            assert self.labels.min() >= 0
            if self.n_classes == 0:
                self.n_classes = int(self.labels.max()) + 1


# ----------------------------------------------------------- simple losses


def quadratic(dim, minimum=None):
    """L(theta) = 0.5 * ||theta - m||^2."""
    m = np.zeros(dim) if minimum is None else np.asarray(minimum, dtype=float)

    def eval_fn(theta):
        diff = theta - m
        return 0.5 * float(diff @ diff)

    def eval_many(batch):
        diff = batch - m[None, :]
        return 0.5 * np.sum(diff * diff, axis=1)

    return Objective("quadratic", dim, eval_fn, SMOOTH, eval_many=eval_many)


def sphere_indicator(dim, center, radius):
    """L = 1 outside the ball of given radius, 0 inside (closed ball)."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    c = np.asarray(center, dtype=float)

    def eval_fn(theta):
        return 0.0 if np.linalg.norm(theta - c) <= radius else 1.0

    def eval_many(batch):
        dist = np.linalg.norm(batch - c[None, :], axis=1)
        return np.where(dist <= radius, 0.0, 1.0)

    return Objective(
        "sphere_indicator", dim, eval_fn, PIECEWISE_CONSTANT, eval_many=eval_many
    )


def staircase1d(step_width):
    """L(theta) = floor(|theta_1| / w): flat plateaus with unit jumps."""
    if step_width <= 0:
        raise ValueError(f"step width must be positive, got {step_width}")

    def eval_fn(theta):
        return float(np.floor(abs(theta[0]) / step_width))

    def eval_many(batch):
        return np.floor(np.abs(batch[:, 0]) / step_width)

    return Objective(
        "staircase1d", 1, eval_fn, PIECEWISE_CONSTANT, eval_many=eval_many
    )


# ------------------------------------------------------------------ tiny MLP


def _int8_round(x):
    """Per-tensor symmetric fake-int8: round(x/s)*s with s = max|x|/127."""
    s = np.max(np.abs(x)) / 127.0
    if s == 0.0:
        return np.zeros_like(x)
    return np.round(x / s) * s


class TinyMLP:
    """One-hidden-layer classifier with selectable hidden activation.

    Parameter layout (flat vector): W1 (h, f), b1 (h), then either
    W2 (c, h), b2 (c), or for the argmax_route variant a gate
    Wg (E, h), bg (E) followed by E expert heads W2_e (c, h), b2_e (c).
    The route picks exactly one expert per sample by gate argmax (ties to
    the lowest index) with no mixing.
    """

    N_EXPERTS = 4

    def __init__(self, n_features, n_hidden, n_classes, activation="relu"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_features = n_features
        self.n_hidden = n_hidden
        self.n_classes = n_classes
        self.activation = activation

    @property
    def layer_shapes(self):
        shapes = [
            LayerShape("fc1.weight", self.n_hidden, self.n_features),
            LayerShape("fc1.bias", self.n_hidden),
        ]
        if self.activation == "argmax_route":
            shapes += [
                LayerShape("gate.weight", self.N_EXPERTS, self.n_hidden),
                LayerShape("gate.bias", self.N_EXPERTS),
            ]
            for e in range(self.N_EXPERTS):
                shapes += [
                    LayerShape(f"expert{e}.weight", self.n_classes, self.n_hidden),
                    LayerShape(f"expert{e}.bias", self.n_classes),
                ]
        else:
            shapes += [
                LayerShape("fc2.weight", self.n_classes, self.n_hidden),
                LayerShape("fc2.bias", self.n_classes),
            ]
        return shapes

    @property
    def n_params(self):
        return sum(s.size for s in self.layer_shapes)

    def _unpack(self, theta):
        out = []
        offset = 0
        for shape in self.layer_shapes:
            block = theta[offset : offset + shape.size]
            if shape.is_bias:
                out.append(block)
            else:
                out.append(block.reshape(shape.d_out, shape.d_in))
            offset += shape.size
        return out

    def _hidden(self, pre):
        if self.activation in ("relu", "argmax_route"):
            return np.maximum(pre, 0.0)
        if self.activation == "sign":
            return np.sign(pre)
        if self.activation == "int8_round":
            return _int8_round(pre)
        return np.floor(pre)  # staircase_floor

    def logits(self, theta, inputs):
        theta = np.asarray(theta, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        tensors = self._unpack(theta)
        w1, b1 = tensors[0], tensors[1]
        hidden = self._hidden(inputs @ w1.T + b1)
        if self.activation == "argmax_route":
            wg, bg = tensors[2], tensors[3]
            gate = hidden @ wg.T + bg
            chosen = np.argmax(gate, axis=1)  # ties: lowest index
            out = np.empty((inputs.shape[0], self.n_classes))
            for e in range(self.N_EXPERTS):
                mask = chosen == e
                if not np.any(mask):
                    continue
                w2, b2 = tensors[4 + 2 * e], tensors[5 + 2 * e]
                out[mask] = hidden[mask] @ w2.T + b2
            return out
        w2, b2 = tensors[2], tensors[3]
        return hidden @ w2.T + b2

    def accuracy(self, theta, data: DatasetHandle):
        pred = np.argmax(self.logits(theta, data.inputs), axis=1)
        return float(np.mean(pred == data.labels))


def cross_entropy(logits, labels):
    """Mean negative log-softmax at the true labels, max-subtracted."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(log_norm - picked))


def mlp_loss(model: TinyMLP, data: DatasetHandle, batch=None):
    """Cross-entropy objective over the flattened MLP parameters."""
    if batch is None:
        inputs, labels = data.inputs, data.labels
    else:
        batch = np.asarray(batch, dtype=int)
        inputs, labels = data.inputs[batch], data.labels[batch]

    def eval_fn(theta):
        return cross_entropy(model.logits(theta, inputs), labels)

    def eval_many(thetas):
        return np.array([eval_fn(np.asarray(t, dtype=float)) for t in thetas])

    return Objective(
        name=f"mlp-{model.activation}",
        dim=model.n_params,
        eval_fn=eval_fn,
        smoothness=PIECEWISE_SMOOTH
        if model.activation == "relu"
        else PIECEWISE_CONSTANT,
        eval_many=eval_many,
        layer_shapes=model.layer_shapes,
    )


# ------------------------------------------------------------------ datasets


def make_blobs(classes, per_class, spread, rng, n_features=2):
    """Isotropic Gaussian blobs around distinct centers on a radius-3 ring."""
    if classes < 2:
        raise ValueError("need at least two classes")
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers = np.zeros((classes, n_features))
    centers[:, 0] = 3.0 * np.cos(angles)
    centers[:, 1 % n_features] = 3.0 * np.sin(angles)
    inputs = np.empty((classes * per_class, n_features))
    labels = np.empty(classes * per_class, dtype=int)
    for k in range(classes):
        block = slice(k * per_class, (k + 1) * per_class)
        inputs[block] = centers[k] + spread * rng.standard_normal(
            (per_class, n_features)
        )
        labels[block] = k
    order = rng.permutation(len(labels))
    return DatasetHandle(inputs[order], labels[order], n_classes=classes)


class IdxFormatError(ValueError):
    """Malformed IDX content; carries the byte offset of the problem."""

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801


def load_idx(path, max_items=None):
    """Parse one IDX file (big-endian) into an ndarray.

    Magic 0x00000803 yields a (n, rows, cols) uint8 image stack; magic
    0x00000801 yields an (n,) label vector.
    """
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < 4:
        raise IdxFormatError("file too short for a magic number", 0)
    (magic,) = struct.unpack(">i", blob[:4])
    if magic == IDX_MAGIC_IMAGES:
        n_dims = 3
    elif magic == IDX_MAGIC_LABELS:
        n_dims = 1
    else:
        raise IdxFormatError(f"unknown magic 0x{magic:08x}", 0)
    header_end = 4 + 4 * n_dims
    if len(blob) < header_end:
        raise IdxFormatError("truncated dimension header", len(blob))
    dims = struct.unpack(f">{n_dims}i", blob[4:header_end])
    expected = int(np.prod(dims))
    body = np.frombuffer(blob, dtype=np.uint8, offset=header_end)
    if body.size != expected:
        raise IdxFormatError(
            f"payload holds {body.size} bytes, header promises {expected}",
            header_end,
        )
    data = body.reshape(dims)
    if max_items is not None:
        data = data[:max_items]
    return data


def load_idx_images(images_path, labels_path=None, max_items=None):
    """Load an IDX image file (and optional label file) as a DatasetHandle.

    Pixels are flattened row-major and normalized to [0, 1].
    """
    images = load_idx(images_path, max_items=max_items)
    if images.ndim != 3:
        raise IdxFormatError("expected an image tensor, found labels", 0)
    inputs = images.reshape(images.shape[0], -1).astype(float) / 255.0
    labels = None
    if labels_path is not None:
        labels = load_idx(labels_path, max_items=max_items).astype(int)
        if len(labels) != len(inputs):
            raise IdxFormatError(
                f"{len(inputs)} images but {len(labels)} labels", 0
            )
    return DatasetHandle(inputs, labels)
