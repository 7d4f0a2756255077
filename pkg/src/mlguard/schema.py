"""Tabular schemas, record batches, and the deterministic schema check.

A schema is a JSON document::

    {"name": str,
     "fields": [{"name": str, "dtype": "real"|"integer"|"categorical",
                 "min"?: num, "max"?: num, "categories"?: [str]}],
     "metadata"?: {str: str}}

Datasets travel as CSV with a header row, UTF-8, "." decimal separator.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyBatch,
    FeatureNameMismatch,
    MalformedSchema,
    NonNumericFeature,
)

DTYPES = ("real", "integer", "categorical")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return _is_int(v) or isinstance(v, float)


@dataclass(frozen=True)
class FieldDef:
    name: str
    dtype: str
    min: float | None = None
    max: float | None = None
    categories: tuple[str, ...] | None = None


@dataclass(frozen=True)
class SchemaDef:
    name: str
    fields: tuple[FieldDef, ...]
    metadata: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class RecordBatch:
    """Columnar batch: ordered column names plus rows of values.

    Values are int, float, or str. Every row has exactly one value per
    column.
    """

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} values, expected {width}")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> tuple:
        try:
            idx = self.columns.index(name)
        except ValueError:
            raise KeyError(name) from None
        return tuple(row[idx] for row in self.rows)


@dataclass(frozen=True)
class SchemaViolation:
    row: int | None
    column: str
    reason: str


@dataclass(frozen=True)
class SchemaVerdict:
    ok: bool
    violations: tuple[SchemaViolation, ...] = field(default=())


def _check_field_def(raw: dict) -> FieldDef:
    if not isinstance(raw, dict):
        raise MalformedSchema(f"field entry must be an object, got {type(raw).__name__}")
    unknown = set(raw) - {"name", "dtype", "min", "max", "categories"}
    if unknown:
        raise MalformedSchema(f"unknown field keys: {sorted(unknown)}")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise MalformedSchema("field name must be a non-empty string")
    dtype = raw.get("dtype")
    if dtype not in DTYPES:
        raise MalformedSchema(f"field {name!r}: dtype must be one of {DTYPES}, got {dtype!r}")
    lo, hi = raw.get("min"), raw.get("max")
    for bound, label in ((lo, "min"), (hi, "max")):
        if bound is not None and not _is_num(bound):
            raise MalformedSchema(f"field {name!r}: {label} must be numeric")
    if lo is not None and hi is not None and lo > hi:
        raise MalformedSchema(f"field {name!r}: min {lo} exceeds max {hi}")
    cats = raw.get("categories")
    if dtype == "categorical":
        if lo is not None or hi is not None:
            raise MalformedSchema(f"field {name!r}: categorical fields cannot have bounds")
        if not isinstance(cats, list) or not cats:
            raise MalformedSchema(f"field {name!r}: categorical fields need a non-empty category list")
        if not all(isinstance(c, str) for c in cats):
            raise MalformedSchema(f"field {name!r}: categories must be strings")
        cats = tuple(cats)
    elif cats is not None:
        raise MalformedSchema(f"field {name!r}: only categorical fields may declare categories")
    return FieldDef(name=name, dtype=dtype, min=lo, max=hi, categories=cats)


def parse_schema_document(text: str) -> SchemaDef:
    """Parse and validate a schema JSON document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedSchema(f"invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedSchema("schema document must be a JSON object")
    unknown = set(doc) - {"name", "fields", "metadata"}
    if unknown:
        raise MalformedSchema(f"unknown schema keys: {sorted(unknown)}")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise MalformedSchema("schema name must be a non-empty string")
    raw_fields = doc.get("fields")
    if not isinstance(raw_fields, list) or not raw_fields:
        raise MalformedSchema("schema must declare at least one field")
    fields = tuple(_check_field_def(f) for f in raw_fields)
    names = [f.name for f in fields]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise MalformedSchema(f"duplicate field names: {dupes}")
    meta = doc.get("metadata") or {}
    if not isinstance(meta, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta.items()
    ):
        raise MalformedSchema("metadata must map strings to strings")
    return SchemaDef(name=name, fields=fields, metadata=tuple(meta.items()))


def serialize_schema(schema: SchemaDef) -> str:
    doc: dict = {"name": schema.name, "fields": []}
    for f in schema.fields:
        entry: dict = {"name": f.name, "dtype": f.dtype}
        if f.min is not None:
            entry["min"] = f.min
        if f.max is not None:
            entry["max"] = f.max
        if f.categories is not None:
            entry["categories"] = list(f.categories)
        doc["fields"].append(entry)
    if schema.metadata:
        doc["metadata"] = dict(schema.metadata)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_schema(locator: str, resolver) -> SchemaDef:
    """Load a schema through a resource resolver. Raises NotFound, MalformedSchema."""
    return parse_schema_document(resolver.read_text(locator))


def infer_schema(data: RecordBatch, name: str = "inferred") -> SchemaDef:
    """Derive a schema from observed data.

    Columns whose values are all integral become integer fields, all-numeric
    columns become real fields, anything else becomes categorical over the
    distinct observed values (stringified). Numeric fields get observed
    extrema as bounds.
    """
    if not data.columns or not data.rows:
        raise EmptyBatch("cannot infer a schema from an empty batch")
    fields = []
    for j, col in enumerate(data.columns):
        values = [row[j] for row in data.rows]
        if all(_is_int(v) for v in values):
            fields.append(FieldDef(col, "integer", min=min(values), max=max(values)))
        elif all(_is_num(v) for v in values):
            fields.append(FieldDef(col, "real", min=float(min(values)), max=float(max(values))))
        else:
            cats = tuple(sorted({str(v) for v in values}))
            fields.append(FieldDef(col, "categorical", categories=cats))
    return SchemaDef(name=name, fields=tuple(fields))


def check_schema(data: RecordBatch, schema: SchemaDef) -> SchemaVerdict:
    """Check a batch against a schema; the verdict lists every violation.

    Column matching is order-insensitive. Integer values are accepted where
    real is declared, not vice versa. Categorical membership is tested on the
    stringified value.
    """
    violations: list[SchemaViolation] = []
    batch_cols = set(data.columns)
    schema_cols = {f.name for f in schema.fields}
    for f in schema.fields:
        if f.name not in batch_cols:
            violations.append(SchemaViolation(None, f.name, "missing_column"))
    for col in data.columns:
        if col not in schema_cols:
            violations.append(SchemaViolation(None, col, "extra_column"))
    col_index = {c: i for i, c in enumerate(data.columns)}
    for f in schema.fields:
        j = col_index.get(f.name)
        if j is None:
            continue
        for i, row in enumerate(data.rows):
            v = row[j]
            if f.dtype == "integer" and not _is_int(v):
                violations.append(SchemaViolation(i, f.name, "dtype_mismatch"))
                continue
            if f.dtype == "real" and not _is_num(v):
                violations.append(SchemaViolation(i, f.name, "dtype_mismatch"))
                continue
            if f.dtype == "categorical":
                if str(v) not in f.categories:
                    violations.append(SchemaViolation(i, f.name, "unknown_category"))
                continue
            if f.min is not None and v < f.min:
                violations.append(SchemaViolation(i, f.name, "out_of_range"))
            elif f.max is not None and v > f.max:
                violations.append(SchemaViolation(i, f.name, "out_of_range"))
    return SchemaVerdict(ok=not violations, violations=tuple(violations))


def _parse_token(tok: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        return tok


def read_csv_text(text: str) -> RecordBatch:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyBatch("CSV document has no header row") from None
    rows = tuple(tuple(_parse_token(tok) for tok in row) for row in reader if row)
    return RecordBatch(columns=tuple(header), rows=rows)


def write_csv_text(batch: RecordBatch) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(batch.columns)
    for row in batch.rows:
        writer.writerow([str(v) for v in row])
    return buf.getvalue()


def read_csv_file(path) -> RecordBatch:
    return read_csv_text(Path(path).read_text(encoding="utf-8"))


def write_csv_file(batch: RecordBatch, path) -> None:
    Path(path).write_text(write_csv_text(batch), encoding="utf-8")


def numeric_matrix(batch: RecordBatch, features) -> np.ndarray:
    """Project named columns to a float matrix of shape (n_rows, n_features).

    Raises FeatureNameMismatch when a feature is absent and NonNumericFeature
    when a projected cell is not numeric.
    """
    features = list(features)
    col_index = {c: i for i, c in enumerate(batch.columns)}
    missing = [f for f in features if f not in col_index]
    if missing:
        raise FeatureNameMismatch(f"batch lacks feature columns {missing}")
    out = np.empty((len(batch.rows), len(features)), dtype=np.float64)
    for jj, f in enumerate(features):
        j = col_index[f]
        for i, row in enumerate(batch.rows):
            v = row[j]
            if not _is_num(v):
                raise NonNumericFeature(f"column {f!r}, row {i}: non-numeric value {v!r}")
            out[i, jj] = v
    return out


def batch_from_matrix(columns, matrix) -> RecordBatch:
    arr = np.asarray(matrix, dtype=np.float64)
    rows = tuple(tuple(float(v) for v in row) for row in arr)
    return RecordBatch(columns=tuple(columns), rows=rows)
