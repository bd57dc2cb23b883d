"""CSV ingestion, schema inference and encoding of network-flow records.

Preprocessing is deliberately minimal: columns holding a single value are
dropped, numeric columns are min-max scaled to [0, 1] with the training
corpus' range, and the remaining (string-valued) columns are one-hot encoded.
"""
from __future__ import annotations

import csv
import json
import math
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_FORMAT = "aoc-ids/schema/v1"
ENCODED_FORMAT = "aoc-ids/encoded/v1"
KINDS = ("continuous", "categorical", "constant")


class SchemaError(ValueError):
    pass


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class RawRecord:
    values: tuple[str, ...]
    label_text: str
    category_text: str | None = None


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    vocab: tuple[str, ...] = ()
    min: float | None = None
    max: float | None = None

    @property
    def width(self) -> int:
        if self.kind == "continuous":
            return 1
        if self.kind == "categorical":
            return len(self.vocab)
        return 0


@dataclass
class FeatureSchema:
    columns: list[ColumnSpec]
    normal_label: str = "normal"

    @property
    def encoded_dim(self) -> int:
        return sum(c.width for c in self.columns)

    @property
    def retained(self) -> list[ColumnSpec]:
        return [c for c in self.columns if c.kind != "constant"]

    def categorical_blocks(self) -> list[tuple[int, int]]:
        """``(start, stop)`` offsets of every one-hot block in the encoded vector."""
        blocks, offset = [], 0
        for col in self.columns:
            if col.kind == "categorical":
                blocks.append((offset, offset + col.width))
            offset += col.width
        return blocks

    def to_dict(self) -> dict:
        return {
            "format": SCHEMA_FORMAT,
            "normal_label": self.normal_label,
            "encoded_dim": self.encoded_dim,
            "columns": [
                {"name": c.name, "kind": c.kind, "vocab": list(c.vocab), "min": c.min, "max": c.max}
                for c in self.columns
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        if d.get("format") != SCHEMA_FORMAT:
            raise SchemaError(f"unsupported schema format {d.get('format')!r}")
        cols = [ColumnSpec(c["name"], c["kind"], tuple(c["vocab"]), c["min"], c["max"]) for c in d["columns"]]
        schema = cls(cols, d["normal_label"])
        if schema.encoded_dim != d["encoded_dim"]:
            raise SchemaError("encoded_dim does not match the column list")
        return schema

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class DatasetDescriptor:
    """How to read one dataset's CSV files.

    ``columns`` names the fields of header-less files. ``category_column``
    holds the attack type when it is separate from the label; otherwise the
    label text itself is the attack type. ``family_map`` groups attack types
    into families for per-category recall.
    """

    label_column: str
    normal_label: str
    name: str = "custom"
    category_column: str | None = None
    columns: list[str] | None = None
    drop_columns: list[str] = field(default_factory=list)
    family_map: dict[str, str] = field(default_factory=dict)
    kinds: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetDescriptor":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SchemaError(f"unknown descriptor keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "DatasetDescriptor":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def family(self, attack_type: str | None) -> str | None:
        if attack_type is None:
            return None
        return self.family_map.get(attack_type, attack_type)


@dataclass
class LabeledExample:
    x: np.ndarray
    y: int
    provenance: str = "true"
    category: str | None = None


@dataclass
class Dataset:
    """Encoded examples as a row matrix plus per-row labels and attack tags."""

    X: np.ndarray
    y: np.ndarray
    attack_type: np.ndarray | None = None
    family: np.ndarray | None = None
    schema: FeatureSchema | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int8)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise SchemaError(f"inconsistent dataset shapes {self.X.shape} / {self.y.shape}")
        n = len(self.y)
        if self.attack_type is None:
            self.attack_type = np.full(n, None, dtype=object)
        if self.family is None:
            self.family = np.full(n, None, dtype=object)

    def __len__(self) -> int:
        return len(self.y)

    def __getitem__(self, idx) -> "Dataset":
        if isinstance(idx, (int, np.integer)):
            idx = [idx]
        return Dataset(self.X[idx], self.y[idx], self.attack_type[idx], self.family[idx], self.schema)

    @property
    def n_normal(self) -> int:
        return int(np.count_nonzero(self.y == 0))

    @property
    def n_abnormal(self) -> int:
        return int(np.count_nonzero(self.y == 1))

    def example(self, i: int) -> LabeledExample:
        return LabeledExample(self.X[i], int(self.y[i]), "true", self.attack_type[i])

    def examples(self) -> Iterator[LabeledExample]:
        for i in range(len(self)):
            yield self.example(i)

    def attack_types(self) -> set[str]:
        return {t for t, y in zip(self.attack_type, self.y) if y == 1 and t is not None}


@dataclass(frozen=True)
class StreamPlan:
    initial_fraction: float = 0.2
    chunk_size: int = 2000
    order_seed: int = 0

    def __post_init__(self):
        if not 0 < self.initial_fraction <= 1:
            raise ValueError(f"initial_fraction must lie in (0, 1], got {self.initial_fraction}")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")


def read_records(path, descriptor: DatasetDescriptor) -> tuple[list[str], list[RawRecord]]:
    """Read a CSV file into feature names and :class:`RawRecord` rows.

    The label, category and dropped columns are removed from ``values``.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if descriptor.columns:
            header = list(descriptor.columns)
        else:
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise SchemaError(f"{path}: empty file") from None
        rows = [row for row in reader if row]

    def col(name):
        try:
            return header.index(name)
        except ValueError:
            raise SchemaError(f"{path}: column {name!r} not found") from None

    label_idx = col(descriptor.label_column)
    cat_idx = col(descriptor.category_column) if descriptor.category_column else None
    skip = {label_idx} | {col(c) for c in descriptor.drop_columns}
    if cat_idx is not None:
        skip.add(cat_idx)
    keep = [i for i in range(len(header)) if i not in skip]
    names = [header[i] for i in keep]

    records = []
    for r, row in enumerate(rows):
        if len(row) != len(header):
            raise SchemaError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        label = row[label_idx].strip()
        category = row[cat_idx].strip() if cat_idx is not None else label
        if label == descriptor.normal_label:
            category = None
        records.append(RawRecord(tuple(row[i].strip() for i in keep), label, category))
    return names, records


def _as_floats(cells: Sequence[str]) -> np.ndarray | None:
    try:
        return np.array(cells, dtype=np.float64)
    except ValueError:
        return None


def infer_schema(
    records: Sequence[RawRecord],
    names: Sequence[str] | None = None,
    declared_kinds: dict[str, str] | None = None,
    normal_label: str = "normal",
) -> FeatureSchema:
    if not records:
        raise SchemaError("cannot infer a schema from zero records")
    width = len(records[0].values)
    for r, rec in enumerate(records):
        if len(rec.values) != width:
            raise SchemaError(f"row {r} has {len(rec.values)} cells, expected {width}")
    names = list(names) if names is not None else [f"c{i}" for i in range(width)]
    if len(names) != width:
        raise SchemaError(f"{len(names)} column names for {width} cells")
    declared_kinds = declared_kinds or {}

    columns = []
    for name, cells in zip(names, zip(*(rec.values for rec in records))):
        distinct = set(cells)
        kind = declared_kinds.get(name)
        if kind is not None and kind not in KINDS:
            raise SchemaError(f"column {name!r}: unknown kind {kind!r}")
        # single-valued columns carry no information, unless declared categorical
        if len(distinct) == 1 and kind != "categorical":
            kind = "constant"
        floats = None
        if kind in (None, "continuous"):
            floats = _as_floats(cells)
            if floats is None:
                if kind == "continuous":
                    raise SchemaError(f"column {name!r} declared continuous but holds non-numeric values")
                kind = "categorical"
            else:
                kind = "continuous"
        if kind == "continuous":
            columns.append(ColumnSpec(name, kind, (), float(floats.min()), float(floats.max())))
        elif kind == "categorical":
            columns.append(ColumnSpec(name, kind, tuple(sorted(distinct))))
        else:
            columns.append(ColumnSpec(name, "constant"))
    return FeatureSchema(columns, normal_label)


def _scale(values: np.ndarray, col: ColumnSpec) -> np.ndarray:
    span = col.max - col.min
    if span == 0:
        return np.zeros_like(values)
    return np.clip((values - col.min) / span, 0.0, 1.0)


def encode(record: RawRecord, schema: FeatureSchema) -> LabeledExample:
    if len(record.values) != len(schema.columns):
        raise EncodeError(f"record has {len(record.values)} cells, schema has {len(schema.columns)} columns")
    parts = []
    for c, (cell, col) in enumerate(zip(record.values, schema.columns)):
        if col.kind == "continuous":
            try:
                value = float(cell)
            except ValueError:
                raise EncodeError(f"column {c} ({col.name!r}): non-numeric value {cell!r}") from None
            parts.append(_scale(np.array([value]), col))
        elif col.kind == "categorical":
            block = np.zeros(len(col.vocab))
            if cell in col.vocab:
                block[col.vocab.index(cell)] = 1.0
            parts.append(block)
    x = np.concatenate(parts) if parts else np.zeros(0)
    y = 0 if record.label_text == schema.normal_label else 1
    return LabeledExample(x, y, "true", record.category_text)


def encode_records(
    records: Sequence[RawRecord],
    schema: FeatureSchema,
    descriptor: DatasetDescriptor | None = None,
) -> Dataset:
    """Vectorized :func:`encode` over many records."""
    n = len(records)
    X = np.zeros((n, schema.encoded_dim))
    columns = list(zip(*(rec.values for rec in records))) if n else [()] * len(schema.columns)
    if len(columns) != len(schema.columns):
        raise EncodeError(f"records have {len(columns)} cells, schema has {len(schema.columns)} columns")
    offset = 0
    for c, (col, cells) in enumerate(zip(schema.columns, columns)):
        if col.kind == "continuous":
            values = _as_floats(cells)
            if values is None:
                for r, cell in enumerate(cells):
                    try:
                        float(cell)
                    except ValueError:
                        raise EncodeError(f"row {r}, column {c} ({col.name!r}): non-numeric value {cell!r}") from None
            X[:, offset] = _scale(values, col)
        elif col.kind == "categorical":
            lookup = {v: k for k, v in enumerate(col.vocab)}
            idx = np.array([lookup.get(cell, -1) for cell in cells], dtype=np.int64)
            hit = idx >= 0
            X[np.flatnonzero(hit), offset + idx[hit]] = 1.0
        offset += col.width

    y = np.array([0 if rec.label_text == schema.normal_label else 1 for rec in records], dtype=np.int8)
    attack = np.array([rec.category_text for rec in records], dtype=object)
    fam_of = descriptor.family if descriptor is not None else (lambda t: t)
    family = np.array([fam_of(rec.category_text) for rec in records], dtype=object)
    return Dataset(X, y, attack, family, schema)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_initial(dataset: Dataset, plan: StreamPlan) -> tuple[Dataset, Dataset]:
    """Random split into a labeled initial set and a shuffled stream."""
    n = len(dataset)
    rng = np.random.default_rng(plan.order_seed)
    order = rng.permutation(n)
    n_init = min(n, max(1, _round_half_up(plan.initial_fraction * n)))
    initial = dataset[np.sort(order[:n_init])]
    stream = dataset[order[n_init:]]
    if initial.n_normal == 0:
        raise SchemaError("initial split contains no normal examples")
    return initial, stream


def chunks(stream, m: int) -> Iterator:
    if m < 1:
        raise ValueError("chunk size must be positive")
    for start in range(0, len(stream), m):
        yield stream[start : start + m]


def save_encoded(dataset: Dataset, out_dir, split: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / f"{split}.x.npy", dataset.X)
    np.save(out / f"{split}.y.npy", dataset.y)
    meta = {
        "format": ENCODED_FORMAT,
        "rows": len(dataset),
        "attack_type": [None if t is None else str(t) for t in dataset.attack_type],
        "family": [None if f is None else str(f) for f in dataset.family],
    }
    (out / f"{split}.meta.json").write_text(json.dumps(meta, separators=(",", ":")) + "\n")
    if dataset.schema is not None:
        dataset.schema.save(out / "schema.json")


def load_encoded(out_dir, split: str) -> Dataset:
    out = Path(out_dir)
    meta = json.loads((out / f"{split}.meta.json").read_text())
    if meta.get("format") != ENCODED_FORMAT:
        raise SchemaError(f"unsupported encoded-dataset format {meta.get('format')!r}")
    schema_path = out / "schema.json"
    schema = FeatureSchema.load(schema_path) if schema_path.exists() else None
    return Dataset(
        np.load(out / f"{split}.x.npy"),
        np.load(out / f"{split}.y.npy"),
        np.array(meta["attack_type"], dtype=object),
        np.array(meta["family"], dtype=object),
        schema,
    )


def load_dataset(
    train_path, test_path, descriptor: DatasetDescriptor
) -> tuple[Dataset, Dataset, FeatureSchema]:
    """Read, fit the schema on the training file, and encode both splits."""
    names, train_records = read_records(train_path, descriptor)
    schema = infer_schema(train_records, names, descriptor.kinds, descriptor.normal_label)
    test_names, test_records = read_records(test_path, descriptor)
    if test_names != names:
        raise SchemaError("train and test files have different feature columns")
    return (
        encode_records(train_records, schema, descriptor),
        encode_records(test_records, schema, descriptor),
        schema,
    )
