"""Synthetic-stream tooling: dataset generation, shift injection, replay.

The harness answers "would this contract have caught it?" by driving a
guarded model over a batch stream with a known shift onset and measuring
false alarms before the onset and detection latency after it.

Shift strings (for the CLI and config files)::

    none                 identity
    mean:3.0             add 3 training stds to every feature
    mean:3.0:0.5         ... to a seeded half of the features
    scale:2.0:0.5        double the spread of a seeded half of the features
    drop:f_03            remove a column
    corrupt:f_03:oops    overwrite a column with a literal
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contract import DistributionMatches
from .detectors import training_stds
from .errors import MLGuardError, UnknownColumn
from .guard import ListSink, guard_predict
from .schema import RecordBatch, _parse_token, batch_from_matrix


@dataclass(frozen=True)
class NoShift:
    pass


@dataclass(frozen=True)
class MeanShift:
    """Add sigmas * (training std) to a seeded subset of the features."""

    sigmas: float
    fraction: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ScaleShift:
    """Stretch a seeded subset of features about their batch mean."""

    factor: float
    fraction: float = 1.0

    def __post_init__(self):
        if self.factor <= 0.0:
            raise ValueError("factor must be positive")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must lie in (0, 1]")


@dataclass(frozen=True)
class DropColumn:
    column: str


@dataclass(frozen=True)
class CorruptValues:
    """Overwrite every cell of one column with a literal value."""

    column: str
    value: object


ShiftSpec = NoShift | MeanShift | ScaleShift | DropColumn | CorruptValues


def parse_shift(text: str) -> ShiftSpec:
    """Parse a shift string; raises ValueError on anything it cannot read."""
    t = text.strip()
    if t in ("", "none"):
        return NoShift()
    parts = t.split(":")
    kind = parts[0]
    try:
        if kind == "mean" and len(parts) in (2, 3):
            return MeanShift(sigmas=float(parts[1]),
                             fraction=float(parts[2]) if len(parts) == 3 else 1.0)
        if kind == "scale" and len(parts) in (2, 3):
            return ScaleShift(factor=float(parts[1]),
                              fraction=float(parts[2]) if len(parts) == 3 else 1.0)
        if kind == "drop" and len(parts) == 2 and parts[1]:
            return DropColumn(column=parts[1])
        if kind == "corrupt" and len(parts) >= 3 and parts[1]:
            return CorruptValues(column=parts[1], value=_parse_token(":".join(parts[2:])))
    except ValueError as e:
        raise ValueError(f"cannot parse shift {text!r}: {e}") from e
    raise ValueError(f"cannot parse shift {text!r}")


def synth_dataset(n_rows: int, n_features: int, seed: int,
                  kind: str = "standard_normal") -> RecordBatch:
    """Generate a deterministic numeric batch with columns f_00, f_01, ...

    ``standard_normal`` draws iid N(0, 1). ``mixture`` draws a per-row
    component in {-1, +1} shared across features, plus unit noise, giving
    each column variance 2 and pairwise feature correlation 1/2.
    """
    if n_rows <= 0 or n_features <= 0:
        raise ValueError("n_rows and n_features must be positive")
    rng = np.random.default_rng(seed)
    if kind == "standard_normal":
        X = rng.standard_normal((n_rows, n_features))
    elif kind == "mixture":
        comp = rng.integers(0, 2, size=(n_rows, 1)) * 2 - 1
        X = comp + rng.standard_normal((n_rows, n_features))
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    columns = tuple(f"f_{j:02d}" for j in range(n_features))
    return batch_from_matrix(columns, X)


def _shift_columns(columns, fraction: float, seed: int) -> tuple[str, ...]:
    k = math.ceil(fraction * len(columns))
    order = np.random.default_rng(seed).permutation(len(columns))
    return tuple(columns[i] for i in sorted(order[:k]))


def _column_scale(batch: RecordBatch, column: str, stds: dict | None) -> float:
    if stds is not None and column in stds and stds[column] > 0.0:
        return float(stds[column])
    values = np.asarray(batch.column(column), dtype=np.float64)
    s = float(values.std())
    return s if s > 0.0 else 1.0


def inject_shift(batch: RecordBatch, shift: ShiftSpec, seed: int,
                 training_stds: dict | None = None) -> RecordBatch:
    """Apply a shift to a batch, deterministically in (shift, seed).

    The affected feature subset depends only on the seed, so every batch of
    a replayed stream drifts in the same coordinates. Mean shifts are in
    units of the training-split std when one is supplied.
    """
    if isinstance(shift, NoShift):
        return batch
    if isinstance(shift, DropColumn):
        if shift.column not in batch.columns:
            raise UnknownColumn(f"batch has no column {shift.column!r}")
        keep = [j for j, c in enumerate(batch.columns) if c != shift.column]
        return RecordBatch(
            columns=tuple(batch.columns[j] for j in keep),
            rows=tuple(tuple(row[j] for j in keep) for row in batch.rows),
        )
    if isinstance(shift, CorruptValues):
        if shift.column not in batch.columns:
            raise UnknownColumn(f"batch has no column {shift.column!r}")
        j = batch.columns.index(shift.column)
        return RecordBatch(
            columns=batch.columns,
            rows=tuple(row[:j] + (shift.value,) + row[j + 1:] for row in batch.rows),
        )

    chosen = set(_shift_columns(batch.columns, shift.fraction, seed))
    new_cols = []
    for c in batch.columns:
        values = np.asarray(batch.column(c), dtype=np.float64)
        if c in chosen:
            if isinstance(shift, MeanShift):
                values = values + shift.sigmas * _column_scale(batch, c, training_stds)
            else:
                center = values.mean()
                values = center + shift.factor * (values - center)
        new_cols.append(values)
    X = np.column_stack(new_cols)
    return batch_from_matrix(batch.columns, X)


@dataclass(frozen=True)
class ConditionStats:
    condition_name: str
    violations: int
    rate: float


@dataclass(frozen=True)
class ReplayReport:
    n_batches: int
    onset: int | None
    false_alarm_rate: float
    detection_latency: int | None
    violating_batches: tuple[int, ...]
    conditions: tuple[ConditionStats, ...]


class _Tee:
    def __init__(self, *sinks):
        self._sinks = sinks

    def append(self, report) -> None:
        for sink in self._sinks:
            sink.append(report)


def _bundle_training_stds(bundle) -> dict | None:
    for name, cond in bundle.contract.conditions():
        if isinstance(cond, DistributionMatches) and name in bundle.detectors:
            return training_stds(bundle.detectors[name])
    return None


def replay(bundle, batches, shift: ShiftSpec = NoShift(), onset: int | None = None,
           *, seed: int = 0, sink=None, adapter=None) -> ReplayReport:
    """Drive a guarded model over a stream, shifting batches at the onset.

    A batch "violates" when the guard records at least one violation for
    it, whatever the action. The false-alarm rate is the violating
    fraction before the onset (of the whole stream when nothing shifts);
    detection latency is (first violating batch at or after onset) - onset,
    None when the shift is never flagged.
    """
    batches = list(batches)
    stds = _bundle_training_stds(bundle)
    collector = ListSink()
    out_sink = collector if sink is None else _Tee(collector, sink)

    shifting = not isinstance(shift, NoShift) and onset is not None
    violated: list[bool] = []
    counts: dict[str, int] = {name: 0 for name, _ in bundle.contract.conditions()}
    for i, batch in enumerate(batches):
        if shifting and i >= onset:
            batch = inject_shift(batch, shift, seed, stds)
        before = len(collector.records)
        try:
            guard_predict(bundle, batch, sink=out_sink, batch_id=i, adapter=adapter)
        except MLGuardError as e:
            raise type(e)(f"batch {i}: {e}") from e
        new = collector.records[before:]
        violated.append(bool(new))
        for name in {r.condition_name for r in new}:
            counts[name] = counts.get(name, 0) + 1

    n = len(batches)
    horizon = onset if shifting else n
    horizon = min(horizon, n)
    false_alarms = sum(violated[:horizon])
    false_alarm_rate = false_alarms / horizon if horizon else 0.0
    latency = None
    if shifting:
        for i in range(onset, n):
            if violated[i]:
                latency = i - onset
                break
    return ReplayReport(
        n_batches=n,
        onset=onset if shifting else None,
        false_alarm_rate=false_alarm_rate,
        detection_latency=latency,
        violating_batches=tuple(i for i, v in enumerate(violated) if v),
        conditions=tuple(
            ConditionStats(condition_name=name, violations=c,
                           rate=c / n if n else 0.0)
            for name, c in counts.items()
        ),
    )


def split_batches(batch: RecordBatch, batch_size: int) -> list[RecordBatch]:
    """Chop a batch into consecutive batches of at most batch_size rows."""
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    return [
        RecordBatch(columns=batch.columns, rows=batch.rows[i:i + batch_size])
        for i in range(0, len(batch.rows), batch_size)
    ]


def report_to_json_dict(report: ReplayReport) -> dict:
    return {
        "n_batches": report.n_batches,
        "onset": report.onset,
        "false_alarm_rate": report.false_alarm_rate,
        "detection_latency": report.detection_latency,
        "violating_batches": list(report.violating_batches),
        "conditions": [
            {"condition_name": c.condition_name, "violations": c.violations,
             "rate": c.rate}
            for c in report.conditions
        ],
    }


def write_report(report: ReplayReport, path) -> None:
    Path(path).write_text(json.dumps(report_to_json_dict(report), indent=2) + "\n",
                          encoding="utf-8")
