"""Cosine similarity and the contrastive objectives used to train the autoencoder.

Two variants are provided. ``crc`` (cluster repelling) shares a single negative
sum across every normal anchor, so each positive pair is contrasted against all
normal/abnormal similarities in the batch. ``infonce`` is the usual per-anchor
form, kept for the ablation.

Only normal samples act as anchors; abnormal samples only ever appear as
negatives. Everything here works on plain numpy arrays and returns analytic
gradients so the model can backpropagate without an autodiff framework.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

EPS = 1e-12
VARIANTS = ("crc", "infonce")


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.02
    variant: str = "crc"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown loss variant {self.variant!r}; expected one of {VARIANTS}")


@dataclass
class BatchRepresentations:
    """Representations of one minibatch, split by (possibly pseudo) label."""

    normals: np.ndarray
    abnormals: np.ndarray

    def __post_init__(self):
        self.normals = np.atleast_2d(np.asarray(self.normals, dtype=np.float64))
        self.abnormals = np.asarray(self.abnormals, dtype=np.float64)
        if self.abnormals.size == 0:
            self.abnormals = self.abnormals.reshape(0, self.normals.shape[1])
        self.abnormals = np.atleast_2d(self.abnormals)
        if self.normals.shape[1] != self.abnormals.shape[1]:
            raise ValueError(
                f"normal and abnormal representations differ in length "
                f"({self.normals.shape[1]} vs {self.abnormals.shape[1]})"
            )

    @classmethod
    def from_labels(cls, reps: np.ndarray, labels: np.ndarray) -> "BatchRepresentations":
        reps = np.asarray(reps, dtype=np.float64)
        labels = np.asarray(labels)
        return cls(reps[labels == 0], reps[labels == 1])


def cosine_sim(v_i, v_j) -> float:
    v_i = np.asarray(v_i, dtype=np.float64)
    v_j = np.asarray(v_j, dtype=np.float64)
    if v_i.shape != v_j.shape:
        raise ValueError(f"length mismatch: {v_i.shape} vs {v_j.shape}")
    return float(v_i @ v_j / ((np.linalg.norm(v_i) + EPS) * (np.linalg.norm(v_j) + EPS)))


def normalize_rows(reps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(unit_rows, norms)`` using the epsilon-guarded denominator."""
    norms = np.linalg.norm(reps, axis=1)
    return reps / (norms + EPS)[:, None], norms


def _logsumexp(a: np.ndarray, axis=None) -> np.ndarray:
    peak = np.max(a, axis=axis, keepdims=True)
    out = peak + np.log(np.sum(np.exp(a - peak), axis=axis, keepdims=True))
    return out if axis is not None else out.reshape(())


def _similarity_grads(
    z_n: np.ndarray, z_a: np.ndarray, cfg: LossConfig
) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss and its gradients w.r.t. the normal/normal and normal/abnormal cosine matrices."""
    l_n = z_n.shape[0]
    tau = cfg.temperature
    pos = (z_n @ z_n.T) / tau
    neg = (z_n @ z_a.T) / tau
    n_pairs = l_n * (l_n - 1)
    off_diag = ~np.eye(l_n, dtype=bool)

    if cfg.variant == "crc":
        log_neg = _logsumexp(neg)  # scalar shared by every anchor
        log_neg_rows = np.full((l_n, 1), float(log_neg))
    else:
        log_neg_rows = _logsumexp(neg, axis=1)  # (l_n, 1): per-anchor negatives

    log_denom = np.logaddexp(pos, log_neg_rows)
    # log(1 + N/e^s) as softplus keeps full relative precision when N << e^s;
    # log_denom - pos would cancel to an absolute error of ~1e-16
    pair_loss = np.where(off_diag, np.logaddexp(0.0, log_neg_rows - pos), 0.0)
    loss = float(pair_loss.sum() / n_pairs)

    share = np.where(off_diag, np.exp(pos - log_denom), 0.0)
    d_pos = np.where(off_diag, share - 1.0, 0.0) / n_pairs
    weight = np.where(off_diag, 1.0 - share, 0.0).sum(axis=1) / n_pairs  # dL/dlogN_i

    if cfg.variant == "crc":
        softmax = np.exp(neg - log_neg)
        d_neg = weight.sum() * softmax
    else:
        softmax = np.exp(neg - log_neg_rows)
        d_neg = weight[:, None] * softmax
    return loss, d_pos / tau, d_neg / tau


def head_loss_and_grad(
    reps: np.ndarray, labels: np.ndarray, cfg: LossConfig
) -> tuple[float, np.ndarray]:
    """Contrastive loss of one head over a labeled batch and ``dL/dreps``.

    Batches with fewer than two normals or no abnormals give zero loss and a
    zero gradient (no positive pairs, or every ratio is exactly one).
    """
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels)
    grad = np.zeros_like(reps)
    normal = labels == 0
    abnormal = ~normal
    if normal.sum() < 2 or abnormal.sum() == 0:
        return 0.0, grad

    z, norms = normalize_rows(reps)
    z_n, z_a = z[normal], z[abnormal]
    loss, g_pos, g_neg = _similarity_grads(z_n, z_a, cfg)

    dz = np.zeros_like(z)
    dz[normal] = (g_pos + g_pos.T) @ z_n + g_neg @ z_a
    dz[abnormal] = g_neg.T @ z_n

    # d(v / (|v| + eps)) / dv, with the second term dropped at |v| == 0
    denom = norms + EPS
    radial = np.einsum("ij,ij->i", reps, dz)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(norms > 0, radial / (norms * denom**2), 0.0)
    grad = dz / denom[:, None] - reps * coef[:, None]
    return loss, grad


def _batch_loss(batch: BatchRepresentations, cfg: LossConfig) -> float:
    if batch.normals.shape[0] < 2:
        warnings.warn("fewer than two normal representations: contrastive loss defined as 0", stacklevel=3)
        return 0.0
    if batch.abnormals.shape[0] == 0:
        return 0.0
    z_n, _ = normalize_rows(batch.normals)
    z_a, _ = normalize_rows(batch.abnormals)
    loss, _, _ = _similarity_grads(z_n, z_a, cfg)
    return loss


def crc_loss(batch: BatchRepresentations, cfg: LossConfig | None = None) -> float:
    cfg = cfg or LossConfig()
    return _batch_loss(batch, LossConfig(cfg.temperature, "crc"))


def infonce_loss(batch: BatchRepresentations, cfg: LossConfig | None = None) -> float:
    cfg = cfg or LossConfig()
    return _batch_loss(batch, LossConfig(cfg.temperature, "infonce"))


def loss_and_grads(
    en_reps: np.ndarray,
    de_reps: np.ndarray,
    labels: np.ndarray,
    cfg: LossConfig,
    heads: str = "both",
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """Sum of the encoder and decoder losses and the gradient for each head.

    ``heads`` selects which terms enter the sum (``both``, ``encoder`` or
    ``decoder``); the gradient of an excluded head is ``None``.
    """
    total = 0.0
    d_en = d_de = None
    if heads in ("both", "encoder"):
        loss, d_en = head_loss_and_grad(en_reps, labels, cfg)
        total += loss
    if heads in ("both", "decoder"):
        loss, d_de = head_loss_and_grad(de_reps, labels, cfg)
        total += loss
    if d_en is None and d_de is None:
        raise ValueError(f"unknown head mode {heads!r}")
    return total, d_en, d_de
