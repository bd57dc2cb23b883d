"""Versioned JSON checkpoint holding everything needed for inference.

Floats are written with Python's shortest round-trip repr, so loading a saved
checkpoint reproduces the parameter arrays bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .dataset import DatasetDescriptor, FeatureSchema
from .model import LayerSpec, ModelParams
from .online import DecisionContext, OnlineConfig

CHECKPOINT_FORMAT = "aoc-ids/checkpoint/v1"


class CheckpointError(ValueError):
    pass


def params_to_dict(params: ModelParams) -> dict:
    spec = params.spec
    return {
        "spec": {
            "sizes": list(spec.sizes),
            "hidden_activation": spec.hidden_activation,
            "output_activation": spec.output_activation,
        },
        "seed": params.seed,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(d: dict) -> ModelParams:
    s = d["spec"]
    spec = LayerSpec(tuple(s["sizes"]), s["hidden_activation"], s["output_activation"])
    weights = [np.asarray(w, dtype=np.float64) for w in d["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    for layer, (w, fan_in, fan_out) in enumerate(zip(weights, spec.sizes[:-1], spec.sizes[1:])):
        if w.shape != (fan_out, fan_in) or biases[layer].shape != (fan_out,):
            raise CheckpointError(f"layer {layer} has shape {w.shape}, spec expects {(fan_out, fan_in)}")
    return ModelParams(spec, weights, biases, d.get("seed"))


def save_checkpoint(
    path,
    params: ModelParams,
    decision: DecisionContext | None = None,
    config: OnlineConfig | None = None,
    schema: FeatureSchema | None = None,
    descriptor: DatasetDescriptor | None = None,
    seen_types=None,
) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "params": params_to_dict(params),
        "decision": decision.to_dict() if decision is not None else None,
        "config": config.to_dict() if config is not None else None,
        "schema": schema.to_dict() if schema is not None else None,
        "descriptor": vars(descriptor) if descriptor is not None else None,
        "seen_attack_types": sorted(seen_types) if seen_types is not None else None,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> dict:
    """Load a checkpoint into live objects, keyed like the saved document."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format')!r}; expected {CHECKPOINT_FORMAT}")
    cfg = doc.get("config")
    return {
        "params": params_from_dict(doc["params"]),
        "decision": DecisionContext.from_dict(doc["decision"]) if doc.get("decision") else None,
        "config": OnlineConfig(**cfg) if cfg else None,
        "schema": FeatureSchema.from_dict(doc["schema"]) if doc.get("schema") else None,
        "descriptor": DatasetDescriptor.from_dict(doc["descriptor"]) if doc.get("descriptor") else None,
        "seen_attack_types": set(doc["seen_attack_types"]) if doc.get("seen_attack_types") is not None else None,
    }
