"""Feature space declaration, observation validation and numeric encoding."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
ORDINAL = "ordinal"
KINDS = (NUMERIC, CATEGORICAL, ORDINAL)

MONOTONIC_NONE = "none"
MONOTONIC_UP = "increase_only"
MONOTONIC_DOWN = "decrease_only"
MONOTONIC = (MONOTONIC_NONE, MONOTONIC_UP, MONOTONIC_DOWN)


class SchemaError(ValueError):
    """Raised when a feature schema declaration is inconsistent."""


class ValidationError(ValueError):
    """Raised when a value does not satisfy its feature declaration."""


@dataclass(frozen=True)
class FeatureDecl:
    """A single feature: its kind, admissible values and actionability flags.

    Numeric and ordinal features carry a closed ``[low, high]`` range
    (ordinal bounds must be integers); categorical features carry an ordered
    tuple of at least two distinct levels. ``immutable`` marks features no
    recourse may touch; ``monotonic`` restricts the direction of admissible
    change for mutable numeric/ordinal features.
    """

    name: str
    kind: str
    low: float | None = None
    high: float | None = None
    levels: tuple[str, ...] = ()
    immutable: bool = False
    monotonic: str = MONOTONIC_NONE

    def __post_init__(self):
        if not self.name:
            raise SchemaError("feature name must be non-empty")
        if self.kind not in KINDS:
            raise SchemaError(f"unknown feature kind {self.kind!r} for {self.name!r}")
        if self.monotonic not in MONOTONIC:
            raise SchemaError(f"unknown monotonic tag {self.monotonic!r} for {self.name!r}")
        if self.kind == CATEGORICAL:
            object.__setattr__(self, "levels", tuple(self.levels))
            if len(self.levels) < 2 or len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"categorical {self.name!r} needs >= 2 distinct levels")
            if self.low is not None or self.high is not None:
                raise SchemaError(f"categorical {self.name!r} admits no numeric range")
            if self.monotonic != MONOTONIC_NONE:
                raise SchemaError(f"categorical {self.name!r} admits no monotonic annotation")
        else:
            if self.low is None or self.high is None:
                raise SchemaError(f"{self.kind} feature {self.name!r} needs a [low, high] range")
            if not (float(self.low) < float(self.high)):
                raise SchemaError(f"feature {self.name!r} range needs low < high")
            if self.levels:
                raise SchemaError(f"{self.kind} feature {self.name!r} admits no level list")
            if self.kind == ORDINAL and (
                float(self.low) != int(self.low) or float(self.high) != int(self.high)
            ):
                raise SchemaError(f"ordinal {self.name!r} bounds must be integers")
            object.__setattr__(self, "low", float(self.low))
            object.__setattr__(self, "high", float(self.high))
        if self.immutable and self.monotonic != MONOTONIC_NONE:
            raise SchemaError(f"immutable feature {self.name!r} admits no monotonic annotation")

    @property
    def encoded_width(self) -> int:
        return len(self.levels) if self.kind == CATEGORICAL else 1

    def contains(self, value) -> bool:
        """Whether ``value`` lies in this feature's declared range / level set."""
        if self.kind == CATEGORICAL:
            return isinstance(value, str) and value in self.levels
        if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
            return False
        v = float(value)
        if not np.isfinite(v):
            return False
        if self.kind == ORDINAL and v != int(v):
            return False
        return self.low <= v <= self.high

    def coerce(self, value):
        """Return the canonical in-range value (float, int or level string)."""
        if not self.contains(value):
            raise ValidationError(f"value {value!r} out of range for feature {self.name!r}")
        if self.kind == NUMERIC:
            return float(value)
        if self.kind == ORDINAL:
            return int(value)
        return str(value)


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature declarations plus target metadata for one classifier."""

    features: tuple[FeatureDecl, ...]
    target_name: str
    positive_label: str
    threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = [f.name for f in self.features]
        if not names:
            raise SchemaError("schema needs at least one feature")
        if len(set(names)) != len(names):
            raise SchemaError("feature names must be unique")
        if not any(not f.immutable for f in self.features):
            raise SchemaError("at least one feature must be mutable")
        if not (0.0 < self.threshold < 1.0):
            raise SchemaError("threshold must lie strictly inside (0, 1)")
        if not self.target_name or not self.positive_label:
            raise SchemaError("target_name and positive_label must be non-empty")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def feature(self, name: str) -> FeatureDecl:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"unknown feature {name!r}")

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"unknown feature {name!r}")

    @property
    def encoded_dim(self) -> int:
        return sum(f.encoded_width for f in self.features)

    def encoded_offsets(self) -> tuple[int, ...]:
        """Start position of each feature's block in the encoded vector."""
        offsets, pos = [], 0
        for f in self.features:
            offsets.append(pos)
            pos += f.encoded_width
        return tuple(offsets)

    def mutable_features(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features if not f.immutable)

    def validate(self, x: "Observation") -> None:
        if len(x.values) != len(self.features):
            raise ValidationError(
                f"observation has {len(x.values)} values, schema declares {len(self.features)}"
            )
        for f, v in zip(self.features, x.values):
            if not f.contains(v):
                raise ValidationError(f"value {v!r} out of range for feature {f.name!r}")


@dataclass(frozen=True)
class Observation:
    """One point of the feature space, values in schema order."""

    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))

    def value(self, schema: FeatureSchema, name: str):
        return self.values[schema.index(name)]

    def replace(self, schema: FeatureSchema, name: str, value) -> "Observation":
        decl = schema.feature(name)
        vals = list(self.values)
        vals[schema.index(name)] = decl.coerce(value)
        return Observation(tuple(vals))

    def to_dict(self, schema: FeatureSchema) -> dict:
        return {f.name: v for f, v in zip(schema.features, self.values)}


def observation_from_dict(schema: FeatureSchema, mapping: Mapping) -> Observation:
    """Build a validated observation from a {feature: value} mapping."""
    missing = [n for n in schema.names if n not in mapping]
    if missing:
        raise ValidationError(f"missing value for feature {missing[0]!r}")
    unknown = [n for n in mapping if n not in schema.names]
    if unknown:
        raise ValidationError(f"unknown feature {unknown[0]!r}")
    return Observation(tuple(schema.feature(n).coerce(mapping[n]) for n in schema.names))


@dataclass(frozen=True)
class Dataset:
    """Validated observations, row order preserved; labels optional and unused
    by the engine (all outputs come from the model under explanation)."""

    schema: FeatureSchema
    rows: tuple[Observation, ...]
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))
        if not self.rows:
            raise ValidationError("dataset must be non-empty")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != len(self.rows):
                raise ValidationError("labels and rows differ in length")
        for r in self.rows:
            self.schema.validate(r)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        i = self.schema.index(name)
        return [r.values[i] for r in self.rows]


def load_dataset(path, schema: FeatureSchema) -> Dataset:
    """Read a comma-delimited UTF-8 file with a header row into a Dataset.

    The header must contain every schema feature name; a column named after
    the schema target is kept as labels; any other column is rejected.
    Errors name the offending row (1-based, excluding the header) and column.
    """
    path = Path(path)
    return parse_dataset_text(path.read_text(encoding="utf-8"), schema, source=str(path))


def parse_dataset_text(text: str, schema: FeatureSchema, source: str = "<text>") -> Dataset:
    """Parse CSV content (same rules as :func:`load_dataset`)."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValidationError(f"{source}: empty file") from None
    header = [h.strip() for h in header]
    for name in schema.names:
        if name not in header:
            raise ValidationError(f"{source}: missing column {name!r}")
    for col in header:
        if col not in schema.names and col != schema.target_name:
            raise ValidationError(f"{source}: unexpected column {col!r}")
    col_of = {name: header.index(name) for name in header}
    label_col = col_of.get(schema.target_name)

    rows: list[Observation] = []
    labels: list[str] = []
    for rownum, record in enumerate(reader, start=1):
        if not record:
            continue
        if len(record) != len(header):
            raise ValidationError(f"{source}: row {rownum} has {len(record)} fields, expected {len(header)}")
        values = []
        for decl in schema.features:
            raw = record[col_of[decl.name]].strip()
            values.append(_parse_cell(raw, decl, rownum))
        rows.append(Observation(tuple(values)))
        if label_col is not None:
            labels.append(record[label_col].strip())
    return Dataset(schema=schema, rows=tuple(rows), labels=tuple(labels) if label_col is not None else None)


def _parse_cell(raw: str, decl: FeatureDecl, rownum: int):
    if decl.kind == CATEGORICAL:
        if raw not in decl.levels:
            raise ValidationError(
                f"row {rownum}, column {decl.name!r}: level {raw!r} not among {list(decl.levels)}"
            )
        return raw
    try:
        v = int(raw) if decl.kind == ORDINAL else float(raw)
    except ValueError:
        raise ValidationError(f"row {rownum}, column {decl.name!r}: cannot parse {raw!r}") from None
    if not decl.contains(v):
        raise ValidationError(
            f"row {rownum}, column {decl.name!r}: value {raw} outside [{decl.low}, {decl.high}]"
        )
    return decl.coerce(v)


def encode_observation(schema: FeatureSchema, x: Observation) -> np.ndarray:
    """Encode an observation as a fixed-width float vector.

    Numeric features pass through, ordinal features map to their 0-based rank
    within the declared range, and each categorical feature expands into one
    indicator per level (full one-hot, exactly one indicator set).
    """
    schema.validate(x)
    out = np.zeros(schema.encoded_dim, dtype=np.float64)
    pos = 0
    for f, v in zip(schema.features, x.values):
        if f.kind == NUMERIC:
            out[pos] = float(v)
            pos += 1
        elif f.kind == ORDINAL:
            out[pos] = float(int(v) - int(f.low))
            pos += 1
        else:
            out[pos + f.levels.index(v)] = 1.0
            pos += len(f.levels)
    return out


def encode_batch(schema: FeatureSchema, rows: Sequence[Observation]) -> np.ndarray:
    return np.array([encode_observation(schema, r) for r in rows], dtype=np.float64)


def decode_observation(schema: FeatureSchema, encoded: np.ndarray) -> Observation:
    """Inverse of :func:`encode_observation` for exact encodings."""
    if encoded.shape != (schema.encoded_dim,):
        raise ValidationError(f"encoded vector has shape {encoded.shape}, expected ({schema.encoded_dim},)")
    values, pos = [], 0
    for f in schema.features:
        if f.kind == NUMERIC:
            values.append(float(encoded[pos]))
            pos += 1
        elif f.kind == ORDINAL:
            values.append(int(round(encoded[pos])) + int(f.low))
            pos += 1
        else:
            block = encoded[pos : pos + len(f.levels)]
            values.append(f.levels[int(np.argmax(block))])
            pos += len(f.levels)
    x = Observation(tuple(values))
    schema.validate(x)
    return x


def schema_to_dict(schema: FeatureSchema) -> dict:
    feats = []
    for f in schema.features:
        d = {"name": f.name, "kind": f.kind, "immutable": f.immutable, "monotonic": f.monotonic}
        if f.kind == CATEGORICAL:
            d["levels"] = list(f.levels)
        else:
            d["range"] = [f.low, f.high]
        feats.append(d)
    return {
        "features": feats,
        "target_name": schema.target_name,
        "positive_label": schema.positive_label,
        "threshold": schema.threshold,
    }


def schema_from_dict(doc: Mapping) -> FeatureSchema:
    try:
        feats = []
        for d in doc["features"]:
            kind = d["kind"]
            rng = d.get("range")
            feats.append(
                FeatureDecl(
                    name=d["name"],
                    kind=kind,
                    low=rng[0] if rng else None,
                    high=rng[1] if rng else None,
                    levels=tuple(d.get("levels", ())),
                    immutable=bool(d.get("immutable", False)),
                    monotonic=d.get("monotonic", MONOTONIC_NONE),
                )
            )
        return FeatureSchema(
            features=tuple(feats),
            target_name=doc["target_name"],
            positive_label=doc["positive_label"],
            threshold=float(doc.get("threshold", 0.5)),
        )
    except (KeyError, IndexError, TypeError) as exc:
        raise SchemaError(f"malformed schema document: {exc}") from exc


def load_schema(path) -> FeatureSchema:
    """Read a JSON schema document (field inventory per FORMATS.md)."""
    with Path(path).open("r", encoding="utf-8") as fh:
        return schema_from_dict(json.load(fh))
