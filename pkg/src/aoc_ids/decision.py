"""Label-free decision making over cosine-similarity scores.

Scores of every training representation against the mean normal
representation are modelled as a two-component univariate Gaussian mixture.
The component with the larger mean describes normal traffic. A new score is
assigned to whichever component has the larger weighted density; the
posterior of that component is the head's confidence. The encoder and decoder
heads are then reconciled by a confidence vote.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .crc_loss import normalize_rows

SIGMA_FLOOR = 1e-4
EM_TOL = 1e-8
EM_MAX_ITER = 500
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DecisionError(ValueError):
    pass


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float
    weight: float

    def log_weighted_pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        return math.log(self.weight) - LOG_SQRT_2PI - math.log(self.sigma) - 0.5 * ((x - self.mu) / self.sigma) ** 2

    def pdf(self, x):
        return np.exp(self.log_weighted_pdf(x) - math.log(self.weight))


@dataclass(frozen=True)
class GaussianPair:
    normal: Gaussian
    abnormal: Gaussian
    collapsed: bool = False
    n_iter: int = 0
    log_likelihood: float = float("nan")

    def __post_init__(self):
        if not self.normal.mu > self.abnormal.mu:
            raise DecisionError("normal component must have the larger mean")

    def to_dict(self) -> dict:
        return {
            "normal": {"mu": self.normal.mu, "sigma": self.normal.sigma, "weight": self.normal.weight},
            "abnormal": {"mu": self.abnormal.mu, "sigma": self.abnormal.sigma, "weight": self.abnormal.weight},
            "collapsed": self.collapsed,
            "n_iter": self.n_iter,
            "log_likelihood": self.log_likelihood,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianPair":
        return cls(
            Gaussian(**d["normal"]),
            Gaussian(**d["abnormal"]),
            bool(d.get("collapsed", False)),
            int(d.get("n_iter", 0)),
            float(d.get("log_likelihood", float("nan"))),
        )


@dataclass(frozen=True)
class HeadDecision:
    label: int
    confidence: float


@dataclass
class AnchorContext:
    """Mean normal representation per head, computed from the initial labeled set only."""

    mean_normal_en: np.ndarray
    mean_normal_de: np.ndarray

    def for_head(self, head: str) -> np.ndarray:
        return self.mean_normal_en if head == "encoder" else self.mean_normal_de

    def to_dict(self) -> dict:
        return {"mean_normal_en": self.mean_normal_en.tolist(), "mean_normal_de": self.mean_normal_de.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorContext":
        return cls(np.asarray(d["mean_normal_en"], dtype=np.float64), np.asarray(d["mean_normal_de"], dtype=np.float64))


def mean_normal(reps) -> np.ndarray:
    reps = np.asarray(reps, dtype=np.float64)
    if reps.ndim != 2 or reps.shape[0] == 0:
        raise DecisionError("mean_normal needs at least one representation")
    return reps.mean(axis=0)


def score_all(anchor, reps) -> np.ndarray:
    """Cosine similarity of each row of ``reps`` to ``anchor``, order preserved."""
    reps = np.atleast_2d(np.asarray(reps, dtype=np.float64))
    anchor = np.asarray(anchor, dtype=np.float64)
    if reps.shape[1] != anchor.shape[0]:
        raise ValueError(f"length mismatch: {reps.shape[1]} vs {anchor.shape[0]}")
    z, _ = normalize_rows(reps)
    unit = anchor / (np.linalg.norm(anchor) + 1e-12)
    return z @ unit


def _mixture_loglik(scores, mu, sigma, weight) -> tuple[float, np.ndarray]:
    log_p = (
        np.log(weight)[:, None]
        - LOG_SQRT_2PI
        - np.log(sigma)[:, None]
        - 0.5 * ((scores[None, :] - mu[:, None]) / sigma[:, None]) ** 2
    )
    log_total = np.logaddexp(log_p[0], log_p[1])
    return float(log_total.sum()), np.exp(log_p - log_total)


def fit_two_gaussians(
    scores,
    fixed_weights: bool = False,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
    trace: list | None = None,
) -> GaussianPair:
    """Maximum-likelihood two-component mixture by expectation-maximization.

    Means start at the 25th and 75th percentiles and both variances at the
    variance of the whole sample. Iteration stops when the relative change in
    log-likelihood drops below ``tol`` or after ``max_iter`` rounds. Standard
    deviations are floored at ``SIGMA_FLOOR``; the result is flagged
    ``collapsed`` when the floor was hit. With ``fixed_weights`` both mixing
    weights stay at 0.5.

    If ``trace`` is given, the log-likelihood after every iteration is appended.
    """
    scores = np.clip(np.asarray(scores, dtype=np.float64).ravel(), -1.0, 1.0)
    if scores.size < 4:
        raise DecisionError(f"need at least 4 scores to fit two Gaussians, got {scores.size}")
    if np.ptp(scores) == 0:
        raise DecisionError("all scores are equal; mixture is undefined")

    n = scores.size
    mu = np.percentile(scores, [25.0, 75.0])
    if mu[0] == mu[1]:
        mu = np.array([scores.min(), scores.max()])
    sigma = np.full(2, max(float(np.std(scores)), SIGMA_FLOOR))
    weight = np.array([0.5, 0.5])
    collapsed = False

    loglik, resp = _mixture_loglik(scores, mu, sigma, weight)
    it = 0
    for it in range(1, max_iter + 1):
        nk = resp.sum(axis=1)
        nk = np.maximum(nk, np.finfo(float).tiny)
        mu = resp @ scores / nk
        var = np.einsum("kn,kn->k", resp, (scores[None, :] - mu[:, None]) ** 2) / nk
        sigma = np.sqrt(var)
        if np.any(sigma < SIGMA_FLOOR):
            collapsed = True
            sigma = np.maximum(sigma, SIGMA_FLOOR)
        if not fixed_weights:
            weight = np.clip(nk / n, 1e-12, 1.0 - 1e-12)
            weight = weight / weight.sum()
        new_loglik, resp = _mixture_loglik(scores, mu, sigma, weight)
        if trace is not None:
            trace.append(new_loglik)
        change = abs(new_loglik - loglik) / max(abs(loglik), 1e-300)
        loglik = new_loglik
        if change < tol:
            break

    hi, lo = (1, 0) if mu[1] >= mu[0] else (0, 1)
    mu_hi, mu_lo = float(mu[hi]), float(mu[lo])
    if mu_hi == mu_lo:
        # keep the ordering strict after a full collapse
        mu_lo = math.nextafter(mu_hi, -math.inf)
        collapsed = True
    return GaussianPair(
        normal=Gaussian(mu_hi, float(sigma[hi]), float(weight[hi])),
        abnormal=Gaussian(mu_lo, float(sigma[lo]), float(weight[lo])),
        collapsed=collapsed,
        n_iter=it,
        log_likelihood=loglik,
    )


def _sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    return np.where(t >= 0, 1.0 / (1.0 + np.exp(-np.abs(t))), np.exp(-np.abs(t)) / (1.0 + np.exp(-np.abs(t))))


def posteriors(scores, pair: GaussianPair) -> tuple[np.ndarray, np.ndarray]:
    """Posterior probabilities ``(p_normal, p_abnormal)`` of each score."""
    margin = pair.normal.log_weighted_pdf(scores) - pair.abnormal.log_weighted_pdf(scores)
    return _sigmoid(margin), _sigmoid(-margin)


def classify_many(scores, pair: GaussianPair) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`classify`: returns ``(labels, confidences)``."""
    margin = pair.normal.log_weighted_pdf(scores) - pair.abnormal.log_weighted_pdf(scores)
    labels = (margin < 0).astype(np.int8)  # equal posteriors stay normal
    confidence = _sigmoid(np.abs(margin))
    return np.atleast_1d(labels), np.atleast_1d(confidence)


def classify(score: float, pair: GaussianPair) -> HeadDecision:
    labels, conf = classify_many(np.array([score]), pair)
    return HeadDecision(int(labels[0]), float(conf[0]))


def vote(en: HeadDecision, de: HeadDecision) -> int:
    if en.label == de.label:
        return en.label
    if en.confidence > de.confidence:
        return en.label
    if de.confidence > en.confidence:
        return de.label
    return 1  # disagreeing heads at equal confidence raise the alarm


def vote_many(en_labels, en_conf, de_labels, de_conf) -> np.ndarray:
    en_labels = np.asarray(en_labels)
    de_labels = np.asarray(de_labels)
    out = np.where(en_conf > de_conf, en_labels, de_labels)
    tie = (en_labels != de_labels) & (np.asarray(en_conf) == np.asarray(de_conf))
    out = np.where(tie, 1, out)
    return out.astype(np.int8)


def fixed_threshold(normal_scores, p: float = 5.0) -> float:
    """The ``p``-th percentile (inverted empirical CDF) of true-normal scores."""
    normal_scores = np.asarray(normal_scores, dtype=np.float64)
    if normal_scores.size == 0:
        raise DecisionError("fixed threshold needs at least one normal score")
    return float(np.percentile(normal_scores, p, method="inverted_cdf"))


def classify_fixed_threshold(score, threshold: float):
    """1 where ``score < threshold``; a score equal to the threshold is normal."""
    out = (np.asarray(score) < threshold).astype(np.int8)
    return int(out) if out.ndim == 0 else out
