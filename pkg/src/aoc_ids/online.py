"""Online self-training loop.

After an initial supervised phase on a small labeled set, the stream is
consumed in chunks. Each round refits the decision model on everything seen so
far, pseudo-labels the chunk (raising alerts for attacks), perturbs a fixed
fraction of the stored pseudo-labels, appends the chunk to the training set
and fine-tunes. Stream ground truth is kept sealed and only opened by the
auditing code that reports pseudo-label quality.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .crc_loss import LossConfig
from .dataset import Dataset
from .decision import (
    AnchorContext,
    GaussianPair,
    HeadDecision,
    classify_fixed_threshold,
    classify_many,
    fit_two_gaussians,
    fixed_threshold,
    mean_normal,
    score_all,
    vote_many,
)
from .evaluation import metrics, zero_day_recall
from .model import LayerSpec, ModelParams, TrainConfig, forward, init_params, train_epochs

logger = logging.getLogger(__name__)

HEAD_MODES = {"both": ("encoder", "decoder"), "encoder": ("encoder",), "decoder": ("decoder",)}
FORWARD_BATCH = 16384


@dataclass
class OnlineConfig:
    epoch_0: int = 4
    epoch_1: int = 1
    chunk_size: int = 2000
    flip_fraction: float = 0.2
    seed: int = 0
    loss: str = "crc"
    heads: str = "both"
    decision: str = "gaussian"
    threshold_percentile: float = 5.0
    temperature: float = 0.02
    learning_rate: float = 0.001
    batch_size: int = 128
    hidden: tuple[int, ...] = (64, 32)
    hidden_activation: str = "relu"
    output_activation: str = "sigmoid"
    fixed_weights: bool = False

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.epoch_0 < 0 or self.epoch_1 < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")
        if not 0 <= self.flip_fraction < 0.5:
            raise ValueError(f"flip_fraction must lie in [0, 0.5), got {self.flip_fraction}")
        if self.heads not in HEAD_MODES:
            raise ValueError(f"unknown head mode {self.heads!r}")
        if self.decision not in ("gaussian", "fixed"):
            raise ValueError(f"unknown decision mode {self.decision!r}")
        if not 0 < self.threshold_percentile < 100:
            raise ValueError("threshold_percentile must lie in (0, 100)")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.temperature, self.loss)

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(self.learning_rate, self.batch_size, self.seed)

    def layer_spec(self, d: int) -> LayerSpec:
        return LayerSpec.for_input(
            d, self.hidden, hidden_activation=self.hidden_activation, output_activation=self.output_activation
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class DecisionContext:
    anchors: AnchorContext
    pairs: dict[str, GaussianPair] = field(default_factory=dict)
    thresholds: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "anchors": self.anchors.to_dict(),
            "pairs": {h: p.to_dict() for h, p in self.pairs.items()},
            "thresholds": dict(self.thresholds),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionContext":
        return cls(
            AnchorContext.from_dict(d["anchors"]),
            {h: GaussianPair.from_dict(p) for h, p in d["pairs"].items()},
            {h: float(t) for h, t in d["thresholds"].items()},
        )


@dataclass
class AlertEvent:
    index: int
    round: int
    label: int
    heads: dict[str, HeadDecision]
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "round": self.round,
            "label": self.label,
            "heads": {h: {"label": d.label, "confidence": d.confidence} for h, d in self.heads.items()},
            "timestamp": self.timestamp,
        }


@dataclass
class OnlineState:
    config: OnlineConfig
    params: ModelParams
    X: np.ndarray
    Y: np.ndarray
    is_pseudo: np.ndarray
    n_initial: int
    train_rng: np.random.Generator
    flip_rng: np.random.Generator
    round: int = 0
    decision: DecisionContext | None = None

    @property
    def initial_normals(self) -> np.ndarray:
        """Indices of the true-labeled normal rows of the initial set."""
        head = slice(0, self.n_initial)
        return np.flatnonzero((self.Y[head] == 0) & ~self.is_pseudo[head])


class SealedLabels:
    """Ground-truth labels of the stream, counting every read made while sealed."""

    def __init__(self, labels):
        self._labels = np.asarray(labels)
        self._open = False
        self.unauthorized_reads = 0

    def __len__(self) -> int:
        return len(self._labels)

    def __getitem__(self, idx):
        if not self._open:
            self.unauthorized_reads += 1
        return self._labels[idx]

    @contextmanager
    def opened(self):
        self._open = True
        try:
            yield self
        finally:
            self._open = False


def _generators(seed: int) -> tuple[int, np.random.Generator, np.random.Generator]:
    init_ss, train_ss, flip_ss = np.random.SeedSequence(seed).spawn(3)
    return (
        int(init_ss.generate_state(1)[0]),
        np.random.default_rng(train_ss),
        np.random.default_rng(flip_ss),
    )


def representations(params: ModelParams, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    en, de = [], []
    for start in range(0, len(X), FORWARD_BATCH):
        out = forward(params, X[start : start + FORWARD_BATCH])
        en.append(out.u_en)
        de.append(out.u_de)
    if not en:
        spec = params.spec
        return np.zeros((0, spec.sizes[spec.bottleneck])), np.zeros((0, spec.input_dim))
    return np.concatenate(en), np.concatenate(de)


def initialize(initial: Dataset, cfg: OnlineConfig) -> OnlineState:
    """Fresh parameters trained ``epoch_0`` epochs on the labeled initial set."""
    init_seed, train_rng, flip_rng = _generators(cfg.seed)
    params = init_params(cfg.layer_spec(initial.X.shape[1]), init_seed)
    params = train_epochs(
        params, initial.X, initial.y, cfg.loss_config, cfg.train_config, cfg.epoch_0, cfg.heads, train_rng
    )
    return OnlineState(
        config=cfg,
        params=params,
        X=initial.X.copy(),
        Y=initial.y.astype(np.int8).copy(),
        is_pseudo=np.zeros(len(initial), dtype=bool),
        n_initial=len(initial),
        train_rng=train_rng,
        flip_rng=flip_rng,
    )


def refresh_decision(state: OnlineState) -> DecisionContext:
    """Recompute anchors from the initial normals and refit each head's decision model.

    Scores cover every row currently in the training set; labels are only used
    to locate the initial normals for the anchor (and for the fixed-threshold
    ablation, whose percentile is taken over those same rows).
    """
    cfg = state.config
    u_en, u_de = representations(state.params, state.X)
    normals = state.initial_normals
    if normals.size == 0:
        raise ValueError("initial set holds no true-labeled normal example")
    anchors = AnchorContext(mean_normal(u_en[normals]), mean_normal(u_de[normals]))
    decision = DecisionContext(anchors)
    for head in HEAD_MODES[cfg.heads]:
        reps = u_en if head == "encoder" else u_de
        scores = score_all(anchors.for_head(head), reps)
        if cfg.decision == "gaussian":
            decision.pairs[head] = fit_two_gaussians(scores, fixed_weights=cfg.fixed_weights)
        else:
            decision.thresholds[head] = fixed_threshold(scores[normals], cfg.threshold_percentile)
    state.decision = decision
    return decision


def predict(
    params: ModelParams, decision: DecisionContext, X: np.ndarray, cfg: OnlineConfig
) -> tuple[np.ndarray, dict[str, tuple[np.ndarray, np.ndarray]]]:
    """Final labels and per-head ``(labels, confidences)`` for the rows of ``X``."""
    u_en, u_de = representations(params, X)
    per_head = {}
    for head in HEAD_MODES[cfg.heads]:
        reps = u_en if head == "encoder" else u_de
        scores = score_all(decision.anchors.for_head(head), reps) if len(reps) else np.zeros(0)
        if cfg.decision == "gaussian":
            per_head[head] = classify_many(scores, decision.pairs[head])
        else:
            # a hard threshold carries no graded confidence
            labels = np.atleast_1d(classify_fixed_threshold(scores, decision.thresholds[head]))
            per_head[head] = (labels, np.ones(len(labels)))
    if len(per_head) == 1:
        final = next(iter(per_head.values()))[0].astype(np.int8)
    else:
        (en_l, en_c), (de_l, de_c) = per_head["encoder"], per_head["decoder"]
        final = vote_many(en_l, en_c, de_l, de_c)
    return final, per_head


def pseudo_label_chunk(
    state: OnlineState, chunk_X: np.ndarray, start_index: int = 0
) -> tuple[np.ndarray, list[AlertEvent]]:
    if state.decision is None:
        raise ValueError("refresh_decision must run before pseudo-labeling")
    labels, per_head = predict(state.params, state.decision, chunk_X, state.config)
    now = time.time()
    alerts = [
        AlertEvent(
            index=start_index + int(i),
            round=state.round,
            label=1,
            heads={h: HeadDecision(int(l[i]), float(c[i])) for h, (l, c) in per_head.items()},
            timestamp=now,
        )
        for i in np.flatnonzero(labels == 1)
    ]
    return labels, alerts


def flip_count(n: int, fraction: float) -> int:
    """``round(fraction * n)`` with halves rounded up."""
    return int(math.floor(fraction * n + 0.5))


def flip_positions(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(n, size=flip_count(n, fraction), replace=False))


def random_flip(labels, fraction: float, rng: np.random.Generator, positions=None) -> np.ndarray:
    """Copy of ``labels`` with ``round(fraction * n)`` uniformly chosen entries inverted."""
    labels = np.asarray(labels, dtype=np.int8)
    if not 0 <= fraction < 0.5:
        raise ValueError(f"flip fraction must lie in [0, 0.5), got {fraction}")
    if positions is None:
        positions = flip_positions(len(labels), fraction, rng)
    out = labels.copy()
    out[positions] = 1 - out[positions]
    return out


def adapt(state: OnlineState, chunk_X: np.ndarray, labels) -> OnlineState:
    labels = np.asarray(labels, dtype=np.int8)
    if len(chunk_X) != len(labels):
        raise ValueError(f"{len(chunk_X)} inputs but {len(labels)} labels")
    cfg = state.config
    state.X = np.concatenate([state.X, chunk_X])
    state.Y = np.concatenate([state.Y, labels])
    state.is_pseudo = np.concatenate([state.is_pseudo, np.ones(len(labels), dtype=bool)])
    state.params = train_epochs(
        state.params, state.X, state.Y, cfg.loss_config, cfg.train_config, cfg.epoch_1, cfg.heads, state.train_rng
    )
    state.round += 1
    return state


def evaluate_state(
    params: ModelParams,
    decision: DecisionContext,
    cfg: OnlineConfig,
    test: Dataset,
    seen_types=None,
) -> dict:
    predictions, _ = predict(params, decision, test.X, cfg)
    result = metrics(predictions, test.y)
    if seen_types is not None:
        result["zero_day"] = [
            {"category": c.category, "detected": c.detected, "total": c.total, "recall": c.recall}
            for c in zero_day_recall(predictions, test.family, test.attack_type, test.y, seen_types)
        ]
    return result


def report_digest(report: dict) -> str:
    """SHA-256 over the deterministic part of a run report."""
    stable = {k: v for k, v in report.items() if k not in ("wall_clock_seconds", "digest")}
    blob = json.dumps(stable, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def _decision_summary(decision: DecisionContext) -> dict:
    return {
        "pairs": {h: p.to_dict() for h, p in decision.pairs.items()},
        "thresholds": dict(decision.thresholds),
    }


def save_state(path, state: OnlineState) -> None:
    """Snapshot enough of ``state`` to resume the stream after this round."""
    payload = {
        "config": state.config.to_dict(),
        "round": state.round,
        "n_initial": state.n_initial,
        "train_rng": state.train_rng.bit_generator.state,
        "flip_rng": state.flip_rng.bit_generator.state,
        "spec": {
            "sizes": list(state.params.spec.sizes),
            "hidden_activation": state.params.spec.hidden_activation,
            "output_activation": state.params.spec.output_activation,
        },
        "seed": state.params.seed,
    }
    arrays = {f"p{i}": a for i, a in enumerate(state.params.arrays())}
    np.savez(path, meta=np.array(json.dumps(payload)), Y=state.Y, is_pseudo=state.is_pseudo, **arrays)


def load_state(path, initial: Dataset, stream_X: np.ndarray) -> OnlineState:
    """Rebuild a state saved by :func:`save_state` from the same initial set and stream."""
    with np.load(path) as data:
        meta = json.loads(str(data["meta"]))
        Y = data["Y"]
        is_pseudo = data["is_pseudo"]
        arrays = [data[f"p{i}"] for i in range(2 * (len(meta["spec"]["sizes"]) - 1))]
    if meta["n_initial"] != len(initial) or not np.array_equal(Y[: len(initial)], initial.y):
        raise ValueError("snapshot was taken from a different initial set")
    cfg_dict = dict(meta["config"])
    cfg = OnlineConfig(**cfg_dict)
    spec = LayerSpec(tuple(meta["spec"]["sizes"]), meta["spec"]["hidden_activation"], meta["spec"]["output_activation"])
    params = ModelParams(spec, list(arrays[0::2]), list(arrays[1::2]), meta["seed"])
    consumed = len(Y) - len(initial)
    train_rng = np.random.default_rng()
    train_rng.bit_generator.state = meta["train_rng"]
    flip_rng = np.random.default_rng()
    flip_rng.bit_generator.state = meta["flip_rng"]
    return OnlineState(
        config=cfg,
        params=params,
        X=np.concatenate([initial.X, stream_X[:consumed]]),
        Y=Y,
        is_pseudo=is_pseudo,
        n_initial=len(initial),
        train_rng=train_rng,
        flip_rng=flip_rng,
        round=meta["round"],
    )


def run_online(
    initial: Dataset,
    stream: Dataset,
    test: Dataset,
    cfg: OnlineConfig,
    seen_types=None,
    alert_sink=None,
    snapshot_dir=None,
    resume_from=None,
) -> tuple[dict, OnlineState]:
    """Run the whole online protocol and evaluate on ``test``.

    ``alert_sink`` is called with each round's list of :class:`AlertEvent`.
    Returns the run report and the final state (its decision context refreshed
    for the final parameters).
    """
    started = time.perf_counter()
    truth = SealedLabels(stream.y)
    stream_X = stream.X
    if resume_from is not None:
        state = load_state(resume_from, initial, stream_X)
        start_round = state.round
        logger.info("resumed at round %d", start_round)
    else:
        state = initialize(initial, cfg)
        start_round = 0

    rounds = []
    m = cfg.chunk_size
    for r, start in enumerate(range(0, len(stream_X), m)):
        if r < start_round:
            continue
        chunk_X = stream_X[start : start + m]
        decision = refresh_decision(state)
        labels, alerts = pseudo_label_chunk(state, chunk_X, start)
        if alert_sink is not None:
            alert_sink(alerts)
        trained_on = random_flip(labels, cfg.flip_fraction, state.flip_rng)
        with truth.opened():
            audit = metrics(labels, truth[start : start + len(chunk_X)])
        record = {
            "round": state.round,
            "size": int(len(chunk_X)),
            "alerts": len(alerts),
            "flipped": int(np.count_nonzero(trained_on != labels)),
            "pseudo_accuracy": audit["accuracy"],
            "pseudo_precision": audit["precision"],
            "pseudo_recall": audit["recall"],
            "decision": _decision_summary(decision),
        }
        rounds.append(record)
        logger.debug(json.dumps({"event": "round", **record}, default=str))
        adapt(state, chunk_X, trained_on)
        if snapshot_dir is not None:
            Path(snapshot_dir).mkdir(parents=True, exist_ok=True)
            save_state(Path(snapshot_dir) / f"round_{state.round:04d}.npz", state)

    final_decision = refresh_decision(state)
    report = {
        "mode": "online",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "initial_size": state.n_initial,
        "stream_size": int(len(stream_X)),
        "final_size": int(len(state.X)),
        "rounds": rounds,
        "final_decision": _decision_summary(final_decision),
        "test": evaluate_state(state.params, final_decision, cfg, test, seen_types),
        "audit": {"hidden_label_reads": truth.unauthorized_reads},
    }
    report["wall_clock_seconds"] = time.perf_counter() - started
    report["digest"] = report_digest(report)
    return report, state


def run_offline(train: Dataset, test: Dataset, cfg: OnlineConfig, seen_types=None) -> tuple[dict, OnlineState]:
    """Fully supervised baseline: ``epoch_0`` epochs on the whole labeled training set."""
    started = time.perf_counter()
    state = initialize(train, cfg)
    decision = refresh_decision(state)
    report = {
        "mode": "offline",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "initial_size": state.n_initial,
        "stream_size": 0,
        "final_size": int(len(state.X)),
        "rounds": [],
        "final_decision": _decision_summary(decision),
        "test": evaluate_state(state.params, decision, cfg, test, seen_types),
        "audit": {"hidden_label_reads": 0},
    }
    report["wall_clock_seconds"] = time.perf_counter() - started
    report["digest"] = report_digest(report)
    return report, state
