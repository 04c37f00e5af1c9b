"""Timestamp-regression MLP whose second hidden layer is the frame embedding.

Architecture: ``D_in -> 2D -> D -> 1`` with logistic activations on every layer.
Inputs are standardized with statistics stored on the model.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import Dataset

log = logging.getLogger(__name__)

TEMB_MAGIC = b"TEMB1"
PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; the learning rate is too high."""


@dataclass(frozen=True)
class EmbeddingConfig:
    embed_dim: int = 32
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 256
    rng_seed: int = 0
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if self.embed_dim < 1:
            raise ValueError("embed_dim must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.weight_init_scale <= 0:
            raise ValueError("weight_init_scale must be positive")


def sigmoid(z):
    # split form avoids overflow in exp for large |z|
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class EmbeddingModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    input_mean: np.ndarray = field(default=None)
    input_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        d_in, h1 = self.W1.shape
        if self.b1.shape != (h1,) or self.W2.shape[0] != h1:
            raise ValueError("layer 1/2 shapes do not chain")
        h2 = self.W2.shape[1]
        if self.b2.shape != (h2,) or self.W3.shape != (h2, 1) or self.b3.shape != (1,):
            raise ValueError("layer 2/3 shapes do not chain")
        if self.input_mean is None:
            self.input_mean = np.zeros(d_in)
        if self.input_scale is None:
            self.input_scale = np.ones(d_in)
        if self.input_mean.shape != (d_in,) or self.input_scale.shape != (d_in,):
            raise ValueError("normalization vectors must have D_in entries")

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.W2.shape[1]

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "EmbeddingModel":
        return replace(self, **{k: np.array(v, copy=True) for k, v in self.params().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params().values())


def init_model(input_dim: int, embed_dim: int, rng_seed: int, weight_init_scale: float = 1.0,
               input_mean=None, input_scale=None) -> EmbeddingModel:
    """Weights uniform in ``[-s, s]`` with ``s = weight_init_scale / sqrt(fan_in)``; zero biases."""
    rng = np.random.default_rng(rng_seed)
    shapes = [(input_dim, 2 * embed_dim), (2 * embed_dim, embed_dim), (embed_dim, 1)]
    weights = []
    for fan_in, fan_out in shapes:
        s = weight_init_scale / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
    return EmbeddingModel(
        weights[0], np.zeros(2 * embed_dim),
        weights[1], np.zeros(embed_dim),
        weights[2], np.zeros(1),
        input_mean, input_scale,
    )


def _check_input(model: EmbeddingModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} input features, got {x.shape[-1]}")
    return x


def _forward_all(model, X):
    Z = (X - model.input_mean) / model.input_scale
    h1 = sigmoid(Z @ model.W1 + model.b1)
    h2 = sigmoid(h1 @ model.W2 + model.b2)
    y = sigmoid(h2 @ model.W3 + model.b3)[:, 0]
    return Z, h1, h2, y


def forward(model: EmbeddingModel, x):
    """Embed one frame (or a batch of frames, one per row).

    Returns
    -------
    embedded : ndarray, shape (D,) or (B, D)
    t_hat : float or ndarray, shape (B,)
    """
    x = _check_input(model, x)
    single = x.ndim == 1
    _, _, h2, y = _forward_all(model, np.atleast_2d(x))
    if single:
        return h2[0], float(y[0])
    return h2, y


def loss(model: EmbeddingModel, X, t) -> float:
    """Mean squared error between predicted and true relative timestamps."""
    X = np.atleast_2d(_check_input(model, X))
    t = np.asarray(t, dtype=np.float64)
    _, _, _, y = _forward_all(model, X)
    return float(np.mean((y - t) ** 2))


def gradient(model: EmbeddingModel, X, t) -> dict:
    """Analytic gradient of :func:`loss` with respect to every parameter."""
    X = np.atleast_2d(_check_input(model, X))
    t = np.asarray(t, dtype=np.float64)
    B = X.shape[0]
    Z, h1, h2, y = _forward_all(model, X)
    d3 = (2.0 / B) * (y - t) * y * (1.0 - y)          # (B,)
    d2 = np.outer(d3, model.W3[:, 0]) * h2 * (1.0 - h2)  # (B, D)
    d1 = (d2 @ model.W2.T) * h1 * (1.0 - h1)             # (B, 2D)
    return {
        "W1": Z.T @ d1,
        "b1": d1.sum(axis=0),
        "W2": h1.T @ d2,
        "b2": d2.sum(axis=0),
        "W3": h2.T @ d3[:, None],
        "b3": np.array([d3.sum()]),
    }


def fit_normalization(frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = frames.mean(axis=0)
    scale = frames.std(axis=0)
    scale[scale < 1e-12] = 1.0
    return mean, scale


@dataclass
class TrainingLog:
    losses: list = field(default_factory=list)  # full-data MSE, index 0 = before training


def train_embedding(dataset: Dataset, cfg: EmbeddingConfig, training_log: TrainingLog = None) -> EmbeddingModel:
    """Mini-batch gradient descent on all frames of all videos.

    Deterministic given ``cfg.rng_seed`` (initialization and per-epoch shuffling).
    Pass a :class:`TrainingLog` to receive the loss after every epoch.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    X = dataset.all_frames()
    t = dataset.all_timestamps()
    mean, scale = fit_normalization(X)
    rng = np.random.default_rng(cfg.rng_seed)
    init_seed = int(rng.integers(2**63))
    model = init_model(X.shape[1], cfg.embed_dim, init_seed, cfg.weight_init_scale, mean, scale)
    if training_log is None:
        training_log = TrainingLog()
    training_log.losses.append(loss(model, X, t))
    n = X.shape[0]
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            grads = gradient(model, X[idx], t[idx])
            for name, g in grads.items():
                getattr(model, name)[...] -= cfg.learning_rate * g
        epoch_loss = loss(model, X, t)
        if not np.isfinite(epoch_loss) or not model.is_finite():
            raise TrainingDiverged(
                f"non-finite loss at epoch {epoch + 1}; lower learning_rate ({cfg.learning_rate})"
            )
        training_log.losses.append(epoch_loss)
        log.debug("epoch %d loss %.6g", epoch + 1, epoch_loss)
    return model


def embed_frames(model: EmbeddingModel, frames: np.ndarray) -> np.ndarray:
    frames = _check_input(model, np.atleast_2d(frames))
    return _forward_all(model, frames)[2]


def embed_dataset(model: EmbeddingModel, dataset: Dataset) -> Dataset:
    """Replace every video's frames with their D-dimensional embedding."""
    if dataset.sequences and dataset.dim != model.input_dim:
        raise ValueError(
            f"model expects {model.input_dim}-dim features, dataset has {dataset.dim}"
        )
    return dataset.map_frames(lambda f: embed_frames(model, f))


# --------------------------------------------------------------------------- checkpoint


def save_model(model: EmbeddingModel, path) -> None:
    parts = [TEMB_MAGIC, struct.pack("<II", model.input_dim, model.embed_dim)]
    for arr in (model.input_mean, model.input_scale, *model.params().values()):
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> EmbeddingModel:
    raw = Path(path).read_bytes()
    if raw[:5] != TEMB_MAGIC:
        raise ValueError(f"{path}: not an embedding checkpoint")
    d_in, d = struct.unpack("<II", raw[5:13])
    shapes = [(d_in,), (d_in,), (d_in, 2 * d), (2 * d,), (2 * d, d), (d,), (d, 1), (1,)]
    arrays, offset = [], 13
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape).copy())
        offset += 8 * size
    if offset != len(raw):
        raise ValueError(f"{path}: unexpected checkpoint length")
    mean, scale, W1, b1, W2, b2, W3, b3 = arrays
    return EmbeddingModel(W1, b1, W2, b2, W3, b3, mean, scale)
