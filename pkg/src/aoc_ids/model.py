"""Fully connected autoencoder with hand-written backpropagation and plain SGD.

The network is symmetric around its bottleneck. Both the bottleneck activation
(``u_en``) and the reconstruction (``u_de``) are used as representations, so the
backward pass accepts a gradient for each and merges them at the bottleneck.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .crc_loss import LossConfig, loss_and_grads

logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


class ModelError(ValueError):
    pass


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        # split on sign to avoid overflow in exp
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass(frozen=True)
class LayerSpec:
    sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        object.__setattr__(self, "sizes", sizes)
        if len(sizes) < 3:
            raise ModelError(f"need at least 3 layers, got {sizes}")
        if any(s <= 0 for s in sizes):
            raise ModelError(f"layer sizes must be positive: {sizes}")
        if sizes != sizes[::-1]:
            raise ModelError(f"layer sizes must be symmetric around the bottleneck: {sizes}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in ACTIVATIONS:
                raise ModelError(f"unknown activation {act!r}")

    @classmethod
    def for_input(cls, d: int, hidden: tuple[int, ...], **kwargs) -> "LayerSpec":
        """``for_input(121, (64, 32))`` -> ``[121, 64, 32, 64, 121]``."""
        return cls((d, *hidden, *hidden[-2::-1], d), **kwargs)

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def bottleneck(self) -> int:
        """Number of layers applied to reach the encoder output."""
        return len(self.sizes) // 2

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def activation(self, layer: int) -> str:
        return self.output_activation if layer == self.n_layers - 1 else self.hidden_activation


@dataclass
class ModelParams:
    """Weights are stored ``(fan_out, fan_in)``; a layer computes ``x @ W.T + b``."""

    spec: LayerSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None

    def copy(self) -> "ModelParams":
        return ModelParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def equals(self, other: "ModelParams") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays())
        )

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.spec, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class ForwardOutputs:
    u_en: np.ndarray
    u_de: np.ndarray
    pre: list[np.ndarray] | None = field(default=None, repr=False)
    post: list[np.ndarray] | None = field(default=None, repr=False)


def init_params(spec: LayerSpec, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.sizes[:-1], spec.sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ModelParams(spec, weights, biases, seed)


def forward(params: ModelParams, x: np.ndarray, training: bool = False) -> ForwardOutputs:
    """Run ``x`` (one vector or a row batch) through the network."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.spec.input_dim:
        raise ModelError(f"input has dimension {h.shape[1]}, model expects {params.spec.input_dim}")

    pre, post = [], [h]
    u_en = None
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        # einsum keeps each row's summation order independent of the batch size,
        # so batched inference matches single-row inference bit for bit
        z = (h @ w.T if training else np.einsum("ij,kj->ik", h, w)) + b
        h = _activate(params.spec.activation(layer), z)
        if training:
            pre.append(z)
            post.append(h)
        if layer + 1 == params.spec.bottleneck:
            u_en = h
    u_de = h
    if single:
        u_en, u_de = u_en[0], u_de[0]
    if training:
        return ForwardOutputs(u_en, u_de, pre, post)
    return ForwardOutputs(u_en, u_de)


def backward(
    params: ModelParams, out: ForwardOutputs, d_en: np.ndarray | None, d_de: np.ndarray | None
) -> ModelParams:
    """Gradients of a loss given its gradients w.r.t. ``u_en`` and ``u_de``."""
    if out.pre is None:
        raise ModelError("backward needs a forward pass run with training=True")
    spec = params.spec
    grads = params.zeros_like()
    batch = out.post[0].shape[0]
    delta = d_de if d_de is not None else np.zeros((batch, spec.sizes[-1]))
    for layer in range(spec.n_layers - 1, -1, -1):
        if layer + 1 == spec.bottleneck and d_en is not None:
            delta = delta + d_en
        dz = delta * _activation_grad(spec.activation(layer), out.pre[layer], out.post[layer + 1])
        grads.weights[layer] = dz.T @ out.post[layer]
        grads.biases[layer] = dz.sum(axis=0)
        if layer:
            delta = dz @ params.weights[layer]
    return grads


def apply_gradients(params: ModelParams, grads: ModelParams, learning_rate: float) -> ModelParams:
    """Return ``params - learning_rate * grads`` as a new object."""
    new = params.copy()
    for layer, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if gw.shape != new.weights[layer].shape or gb.shape != new.biases[layer].shape:
            raise ModelError(f"gradient shape mismatch at layer {layer}")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise ModelError(f"non-finite gradient in layer {layer}")
        new.weights[layer] -= learning_rate * gw
        new.biases[layer] -= learning_rate * gb
    return new


def batch_loss_and_grads(
    params: ModelParams, x: np.ndarray, y: np.ndarray, loss_cfg: LossConfig, heads: str = "both"
) -> tuple[float, ModelParams]:
    out = forward(params, x, training=True)
    loss, d_en, d_de = loss_and_grads(out.u_en, out.u_de, y, loss_cfg, heads)
    return loss, backward(params, out, d_en, d_de)


def _check_trainable(y: np.ndarray) -> None:
    n_abnormal = int(np.sum(y == 1))
    n_normal = int(np.sum(y == 0))
    if n_normal < 2 or n_abnormal < 1:
        raise ModelError(
            f"training needs at least 2 normal and 1 abnormal examples (got {n_normal} and {n_abnormal})"
        )


def train_epochs(
    params: ModelParams,
    x: np.ndarray,
    y: np.ndarray,
    loss_cfg: LossConfig,
    config: TrainConfig,
    epochs: int,
    heads: str = "both",
    rng: np.random.Generator | None = None,
) -> ModelParams:
    """Minibatch SGD on the contrastive objective for ``epochs`` passes.

    Each epoch reshuffles with ``rng`` (seeded from ``config.seed`` when not
    given). Batches with fewer than two normals or no abnormal contribute no
    update.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    y = np.asarray(y)
    _check_trainable(y)
    if epochs == 0:
        return params
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    params = params.copy()
    n = len(y)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, used = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            yb = y[idx]
            if np.count_nonzero(yb == 0) < 2 or not np.any(yb == 1):
                continue
            loss, grads = batch_loss_and_grads(params, x[idx], yb, loss_cfg, heads)
            _sgd_step(params, grads, config.learning_rate)
            total += loss
            used += 1
        logger.debug("epoch %d: mean batch loss %.6f over %d batches", epoch, total / max(used, 1), used)
    return params


def _sgd_step(params: ModelParams, grads: ModelParams, lr: float) -> None:
    # in-place variant of apply_gradients for the hot loop
    for layer, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise ModelError(f"non-finite gradient in layer {layer}")
        params.weights[layer] -= lr * gw
        params.biases[layer] -= lr * gb
