"""Command-line entry point: ``aoc-ids {preprocess,run,offline,evaluate,synth}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .dataset import (
    DatasetDescriptor,
    EncodeError,
    SchemaError,
    StreamPlan,
    encode_records,
    load_dataset,
    load_encoded,
    read_records,
    save_encoded,
    split_initial,
)
from .decision import DecisionError
from .evaluation import aggregate, emit_report
from .model import ModelError
from .online import OnlineConfig, evaluate_state, run_offline, run_online
from .profiles import descriptor_for, load_profile, profile_names

logger = logging.getLogger("aoc_ids")

OUT_ENV = "AOC_IDS_OUT"
EXIT_ERROR = 1
EXIT_TOLERANCE = 3


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
        except ValueError:
            payload = {"message": msg}
        if not isinstance(payload, dict):
            payload = {"message": msg}
        return json.dumps({"level": record.levelname.lower(), "logger": record.name, **payload}, default=str)


def _setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("aoc_ids")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUT_ENV, "runs")) / name


def _descriptor(args) -> DatasetDescriptor:
    if args.descriptor:
        return DatasetDescriptor.load(args.descriptor)
    if args.dataset:
        return descriptor_for(args.dataset)
    raise SchemaError("either --dataset or --descriptor is required")


def _parse_decision(text: str) -> tuple[str, float]:
    if text == "gaussian":
        return "gaussian", 5.0
    if text.startswith("fixed"):
        _, _, p = text.partition(":")
        return "fixed", float(p) if p else 5.0
    raise argparse.ArgumentTypeError(f"expected 'gaussian' or 'fixed:P', got {text!r}")


def _parse_expect(text: str) -> tuple[str, float]:
    key, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected METRIC=PERCENT, got {text!r}")
    return key, float(value)


def _load_data(args, descriptor):
    if args.data:
        train = load_encoded(args.data, "train")
        test = load_encoded(args.data, "test")
        return train, test, train.schema
    if not (args.train and args.test):
        raise SchemaError("provide --train and --test CSV files, or --data with a preprocessed directory")
    return load_dataset(args.train, args.test, descriptor)


def _config(args) -> tuple[OnlineConfig, float]:
    hp = dict(load_profile(args.dataset)["hyperparameters"]) if args.dataset else {}
    initial_fraction = hp.pop("initial_fraction", 0.2)
    overrides = {
        "epoch_0": args.epoch0,
        "epoch_1": args.epoch1,
        "chunk_size": args.chunk,
        "flip_fraction": args.flip,
        "loss": args.loss,
        "heads": args.heads,
        "learning_rate": args.lr,
        "batch_size": args.batch_size,
        "temperature": args.temperature,
    }
    hp.update({k: v for k, v in overrides.items() if v is not None})
    if args.decision is not None:
        hp["decision"], hp["threshold_percentile"] = args.decision
    if args.initial_fraction is not None:
        initial_fraction = args.initial_fraction
    return OnlineConfig(seed=args.seed, **hp), initial_fraction


def cmd_preprocess(args) -> int:
    descriptor = _descriptor(args)
    train, test, schema = load_dataset(args.train, args.test, descriptor)
    out = Path(args.out) if args.out else _default_out("preprocessed")
    save_encoded(train, out, "train")
    save_encoded(test, out, "test")
    print(f"encoded_dim={schema.encoded_dim}")
    print(f"train_rows={len(train)} test_rows={len(test)} out={out}")
    return 0


def _check_expectations(summary: dict, expects, tolerance: float) -> list[str]:
    failures = []
    for key, target in expects or []:
        value = summary.get(key)
        if value is None or abs(100 * value - target) > tolerance:
            shown = "undefined" if value is None else f"{100 * value:.2f}"
            failures.append(f"{key}={shown} outside {target:.2f}±{tolerance:.2f}")
    return failures


def cmd_run(args) -> int:
    descriptor = _descriptor(args)
    train, test, schema = _load_data(args, descriptor)
    cfg, initial_fraction = _config(args)
    seen = train.attack_types()
    mode = "offline" if args.offline else "online"
    out = Path(args.out) if args.out else _default_out(mode)
    out.mkdir(parents=True, exist_ok=True)

    results = []
    for i in range(args.runs):
        run_cfg = OnlineConfig(**{**cfg.to_dict(), "seed": cfg.seed + i})
        tag = f"run{i}"
        if args.offline:
            report, state = run_offline(train, test, run_cfg, seen)
        else:
            plan = StreamPlan(initial_fraction, run_cfg.chunk_size, run_cfg.seed)
            initial, stream = split_initial(train, plan)
            alert_path = out / f"{tag}.alerts.jsonl"
            alert_path.write_text("")

            def sink(alerts, path=alert_path):
                with open(path, "a") as fh:
                    for a in alerts:
                        fh.write(json.dumps(a.to_dict()) + "\n")

            report, state = run_online(
                initial,
                stream,
                test,
                run_cfg,
                seen,
                alert_sink=sink,
                snapshot_dir=out / f"{tag}.snapshots" if args.snapshots else None,
                resume_from=args.resume if i == 0 else None,
            )
        (out / f"{tag}.report.json").write_text(json.dumps(report, indent=1, default=str) + "\n")
        save_checkpoint(out / f"{tag}.ckpt.json", state.params, state.decision, run_cfg, schema, descriptor, seen)
        metrics_row = {k: report["test"][k] for k in ("accuracy", "precision", "recall", "f1")}
        results.append(metrics_row)
        logger.info(json.dumps({"event": "run_done", "run": i, "seed": run_cfg.seed, **metrics_row}))

    summary = aggregate(results)
    summary["mode"] = mode
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    emit_report([{"name": f"AOC-IDS ({mode})", **summary}], "markdown", out / "summary.md")
    print(json.dumps(summary))
    failures = _check_expectations(summary, args.expect, args.tolerance)
    for f in failures:
        print(f"tolerance failure: {f}", file=sys.stderr)
    return EXIT_TOLERANCE if failures else 0


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt["decision"] is None or ckpt["config"] is None:
        raise CheckpointError("checkpoint lacks the decision context needed for inference")
    if args.data:
        test = load_encoded(args.data, "test")
    else:
        if ckpt["schema"] is None or ckpt["descriptor"] is None:
            raise CheckpointError("checkpoint has no schema; pass --data with a preprocessed directory")
        _, records = read_records(args.test, ckpt["descriptor"])
        test = encode_records(records, ckpt["schema"], ckpt["descriptor"])
    seen = ckpt["seen_attack_types"] if args.zero_day else None
    result = evaluate_state(ckpt["params"], ckpt["decision"], ckpt["config"], test, seen)
    text = json.dumps(result, indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_synth(args) -> int:
    from .synthetic import write_pair

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pair(out / "train.csv", out / "test.csv", args.train_rows, args.test_rows, args.seed)
    print(f"wrote {out / 'train.csv'} and {out / 'test.csv'}")
    return 0


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", choices=profile_names(), help="dataset profile (descriptor and default hyperparameters)")
    p.add_argument("--descriptor", help="JSON dataset descriptor; overrides the profile's")
    p.add_argument("--train", help="training CSV")
    p.add_argument("--test", help="test CSV")
    p.add_argument("--out", help=f"output directory (default under ${OUT_ENV} or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aoc-ids", description=__doc__, allow_abbrev=False)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="infer the schema and encode train/test CSVs", allow_abbrev=False)
    _add_data_flags(p)
    p.set_defaults(func=cmd_preprocess)

    for name, offline in (("run", False), ("offline", True)):
        p = sub.add_parser(name, help=f"{'offline' if offline else 'online'} training and evaluation", allow_abbrev=False)
        _add_data_flags(p)
        p.add_argument("--data", help="directory written by 'preprocess' (instead of --train/--test)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--epoch0", type=int, help="epochs on the initial labeled set")
        p.add_argument("--epoch1", type=int, help="fine-tuning epochs per round")
        p.add_argument("--chunk", type=int, help="stream chunk size m")
        p.add_argument("--lambda", dest="flip", type=float, help="fraction of pseudo-labels flipped per round")
        p.add_argument("--initial-fraction", type=float, help="labeled share of the training file")
        p.add_argument("--loss", choices=["crc", "infonce"])
        p.add_argument("--heads", choices=["both", "encoder", "decoder"])
        p.add_argument("--decision", type=_parse_decision, help="'gaussian' or 'fixed:P'")
        p.add_argument("--lr", type=float, help="SGD learning rate")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--temperature", type=float)
        p.add_argument("--runs", type=int, default=1, help="repeat with seeds seed..seed+N-1 and average")
        p.add_argument("--offline", action="store_true", default=offline, help="train on the full labeled set")
        p.add_argument("--snapshots", action="store_true", help="write a state snapshot after every round")
        p.add_argument("--resume", help="snapshot to resume the first run from")
        p.add_argument("--expect", type=_parse_expect, action="append", help="METRIC=PERCENT target, repeatable")
        p.add_argument("--tolerance", type=float, default=3.0, help="allowed deviation in percentage points")
        p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="inference-only evaluation of a checkpoint", allow_abbrev=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", help="raw test CSV (encoded with the checkpoint's schema)")
    p.add_argument("--data", help="preprocessed directory holding test.*")
    p.add_argument("--zero-day", action="store_true", help="add per-family seen/unseen recall")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic NSL-KDD-shaped train/test pair", allow_abbrev=False)
    p.add_argument("--out", required=True)
    p.add_argument("--train-rows", type=int, default=5000)
    p.add_argument("--test-rows", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(args.log_level)
    try:
        return args.func(args)
    except (SchemaError, EncodeError, ModelError, DecisionError, CheckpointError, ValueError, KeyError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
