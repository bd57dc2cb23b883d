"""Binary detection metrics, per-family seen/unseen recall and report files."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRIC_KEYS = ("accuracy", "precision", "recall", "f1")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_labels(cls, predictions, truths) -> "ConfusionCounts":
        p = np.asarray(predictions).astype(bool)
        t = np.asarray(truths).astype(bool)
        if p.shape != t.shape:
            raise ValueError(f"length mismatch: {p.shape[0]} predictions vs {t.shape[0]} truths")
        if p.size == 0:
            raise ValueError("no examples to evaluate")
        return cls(
            int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & ~t)), int(np.sum(~p & t))
        )


@dataclass(frozen=True)
class CategoryRecall:
    category: str
    detected: int
    total: int

    @property
    def recall(self) -> float:
        return self.detected / self.total


def metrics_from_counts(c: ConfusionCounts) -> dict:
    """Accuracy, precision, recall and F1 (attack is the positive class).

    An undefined ratio is reported as ``None`` and its reason is listed under
    ``"undefined"``.
    """
    out = {"accuracy": (c.tp + c.tn) / c.total}
    undefined = {}
    if c.tp + c.fp:
        out["precision"] = c.tp / (c.tp + c.fp)
    else:
        out["precision"] = None
        undefined["precision"] = "no positive predictions"
    if c.tp + c.fn:
        out["recall"] = c.tp / (c.tp + c.fn)
    else:
        out["recall"] = None
        undefined["recall"] = "no positive examples"
    p, r = out["precision"], out["recall"]
    if p is not None and r is not None and p + r > 0:
        out["f1"] = 2 * p * r / (p + r)
    else:
        out["f1"] = None
        undefined["f1"] = "precision or recall undefined or both zero"
    out["counts"] = {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn}
    if undefined:
        out["undefined"] = undefined
    return out


def metrics(predictions, truths) -> dict:
    return metrics_from_counts(ConfusionCounts.from_labels(predictions, truths))


def zero_day_recall(predictions, families, attack_types, truths, seen_types) -> list[CategoryRecall]:
    """Recall per ``<family>_seen`` / ``<family>_unseen`` group of attack rows.

    An attack type is unseen when it never occurs among ``seen_types`` (the
    training file's attack types). Attack rows lacking a family are grouped
    under ``untagged``. Normal rows never enter a denominator.
    """
    predictions = np.asarray(predictions)
    truths = np.asarray(truths)
    seen_types = set(seen_types)
    detected: dict[str, int] = {}
    total: dict[str, int] = {}
    for pred, fam, kind, truth in zip(predictions, families, attack_types, truths):
        if truth != 1:
            continue
        if fam is None:
            key = "untagged"
        else:
            key = f"{fam}_{'seen' if kind in seen_types else 'unseen'}"
        total[key] = total.get(key, 0) + 1
        detected[key] = detected.get(key, 0) + int(pred == 1)
    return [CategoryRecall(k, detected[k], total[k]) for k in sorted(total)]


def aggregate(runs: list[dict]) -> dict:
    """Mean and standard deviation of each metric over repeated runs."""
    out = {}
    for key in METRIC_KEYS:
        values = [r[key] for r in runs if r.get(key) is not None]
        if values:
            out[key] = float(np.mean(values))
            out[f"{key}_std"] = float(np.std(values))
        else:
            out[key] = None
    out["runs"] = len(runs)
    return out


def _pct(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{100 * value:.2f}"


def emit_report(rows: list[dict], fmt: str, path=None) -> str:
    """Render named metric rows as json, csv or markdown, optionally writing ``path``.

    Each row is ``{"name": ..., "accuracy": ..., ...}`` with metrics as
    fractions; csv and markdown render percentages with two decimals.
    """
    if not rows:
        raise ValueError("no rows to report")
    columns = ["name", *METRIC_KEYS]
    if fmt == "json":
        text = json.dumps([{k: row.get(k) for k in columns} for row in rows], indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([row["name"], *(_pct(row.get(k)) for k in METRIC_KEYS)])
        text = buf.getvalue()
    elif fmt == "markdown":
        lines = ["| Method | Acc. | Pre. | Rec. | F1 |", "|---|---|---|---|---|"]
        for row in rows:
            lines.append("| " + " | ".join([row["name"], *(_pct(row.get(k)) for k in METRIC_KEYS)]) + " |")
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv_report(text: str) -> list[dict]:
    """Parse a csv report back into fractional metric rows."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {"name": rec["name"]}
        for k in METRIC_KEYS:
            row[k] = float(rec[k]) / 100 if rec[k] else None
        rows.append(row)
    return rows
