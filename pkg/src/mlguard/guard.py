"""The enforcement wrapper around a guarded model.

guard_predict checks a contract's preconditions against the input batch,
invokes the model through an adapter, checks postconditions against the
output, and executes each violated condition's action:

* ``log_warning``: record the violation, keep going.
* ``exception``: record it and reject; a precondition rejection means the
  model is never invoked, a postcondition rejection suppresses the output.
  Remaining conditions in the same phase are still evaluated so operators
  see the complete picture.
* ``propagate_uncertainty``: record it under the output's ``uncertainty``
  without touching the predictions.

Violation records go to an append-only JSON-lines sink, one report per
line. Wire protocol for external models: POST ``<endpoint>/v1/predict``
with ``{"instances": [[num, ...], ...]}``; a 200 response carries
``{"probabilities": [[num, ...], ...]}``. Builtin models are JSON files
``{"weights": [[num]], "bias": [num], "classes": [str]}``.
"""

from __future__ import annotations

import json
import threading
import time
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import requests

from .contract import (
    DistributionMatches,
    ProbabilitiesSumToOne,
    RangeCheck,
    SchemaMatches,
)
from .detectors import evaluate as evaluate_detector
from .errors import (
    AdapterFailure,
    BundleInvariantBroken,
    DimensionMismatch,
    MalformedResponse,
    MLGuardError,
    SinkFailureWarning,
    Timeout,
    TransportFailure,
    UnsupportedModelFormat,
)
from .schema import RecordBatch, check_schema, numeric_matrix, _is_num

RETRY_BACKOFF_S = 0.1
DEFAULT_TIMEOUT_MS = 10_000
DEFAULT_RETRIES = 3
_DETAIL_MAX_ITEMS = 20


@dataclass(frozen=True)
class BuiltinLinear:
    """A linear softmax model: row i of the output is softmax(W x_i + b)."""

    weights: tuple[tuple[float, ...], ...]
    bias: tuple[float, ...]
    class_names: tuple[str, ...]

    def __post_init__(self):
        c = len(self.bias)
        if c == 0 or len(self.weights) != c or len(self.class_names) != c:
            raise ValueError("weights, bias, and class_names must agree on the class count")
        widths = {len(row) for row in self.weights}
        if len(widths) != 1 or 0 in widths:
            raise ValueError("weight rows must share one positive input width")


@dataclass(frozen=True)
class ExternalHttp:
    """A remote model reached over the prediction wire protocol."""

    endpoint: str
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    retries: int = DEFAULT_RETRIES

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")


@dataclass(frozen=True)
class ViolationReport:
    condition_name: str
    kind: str  # distribution | schema | postcondition | range
    p_violation: float
    action_taken: str
    detail: dict
    batch_id: int
    timestamp: str

    def to_json_dict(self) -> dict:
        doc = {
            "condition_name": self.condition_name,
            "kind": self.kind,
            "p_violation": self.p_violation,
            "action_taken": self.action_taken,
            "detail": self.detail,
            "batch_id": self.batch_id,
            "timestamp": self.timestamp,
        }
        if self.action_taken == "propagate_uncertainty":
            doc["propagated"] = True
        return doc


@dataclass(frozen=True)
class GuardedOutput:
    status: str  # "ok" | "rejected"
    predictions: tuple[tuple[float, ...], ...] | None
    warnings: tuple[ViolationReport, ...]
    uncertainty: dict | None = None


@dataclass(frozen=True)
class SumToOneVerdict:
    ok: bool
    worst_row: int | None
    worst_deviation: float


class NullSink:
    """Discards violation records."""

    def append(self, report: ViolationReport) -> None:
        pass


class ListSink:
    """Collects violation records in memory."""

    def __init__(self):
        self.records: list[ViolationReport] = []

    def append(self, report: ViolationReport) -> None:
        self.records.append(report)


class ViolationLog:
    """Append-only JSON-lines violation log with single-writer discipline."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def append(self, report: ViolationReport) -> None:
        line = json.dumps(report.to_json_dict()) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)


def _now_iso() -> str:
    dt = datetime.now(timezone.utc)
    return (f"{dt.year:04d}-{dt.month:02d}-{dt.day:02d}"
            f"T{dt.hour:02d}:{dt.minute:02d}:{dt.second:02d}.{dt.microsecond // 1000:03d}Z")


# -- model adapters ----------------------------------------------------------


def builtin_predict(adapter: BuiltinLinear, x) -> np.ndarray:
    """Probabilities for each input row: softmax(W x + b), stabilized by
    max-subtraction so saturated logits do not overflow."""
    X = np.asarray(x, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d input matrix, got ndim {X.ndim}")
    W = np.asarray(adapter.weights, dtype=np.float64)
    b = np.asarray(adapter.bias, dtype=np.float64)
    if X.shape[1] != W.shape[1]:
        raise DimensionMismatch(
            f"input has {X.shape[1]} features, model expects {W.shape[1]}"
        )
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    z = np.exp(logits)
    return z / z.sum(axis=1, keepdims=True)


def _wire_matrix(doc) -> list:
    if not isinstance(doc, dict) or "probabilities" not in doc:
        raise MalformedResponse("response lacks a 'probabilities' field")
    probs = doc["probabilities"]
    if not isinstance(probs, list):
        raise MalformedResponse("'probabilities' must be a list of rows")
    for row in probs:
        if not isinstance(row, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in row
        ):
            raise MalformedResponse("'probabilities' rows must be lists of numbers")
    return probs


def http_predict(adapter: ExternalHttp, x) -> list:
    """POST the batch to the prediction endpoint and return the probability
    matrix as-is; validating it is the postconditions' job, not the
    adapter's. Transport failures (including non-200 statuses) are retried
    with exponential backoff starting at 100 ms."""
    X = np.asarray(x, dtype=np.float64)
    url = adapter.endpoint.rstrip("/") + "/v1/predict"
    body = {"instances": X.tolist()}
    timeout_s = adapter.timeout_ms / 1000.0
    last_error: Exception | None = None
    timed_out = False
    for attempt in range(adapter.retries + 1):
        if attempt:
            time.sleep(RETRY_BACKOFF_S * 2 ** (attempt - 1))
        try:
            resp = requests.post(url, json=body, timeout=timeout_s)
        except requests.Timeout as e:
            last_error, timed_out = e, True
            continue
        except requests.RequestException as e:
            last_error, timed_out = e, False
            continue
        if resp.status_code != 200:
            last_error = TransportFailure(
                f"endpoint answered status {resp.status_code}"
            )
            timed_out = False
            continue
        try:
            doc = resp.json()
        except ValueError as e:
            raise MalformedResponse(f"response body is not JSON: {e}") from e
        return _wire_matrix(doc)
    if timed_out:
        raise Timeout(f"no answer from {url} within {adapter.timeout_ms} ms "
                      f"after {adapter.retries} retries") from last_error
    raise TransportFailure(
        f"prediction request to {url} failed after {adapter.retries} retries: {last_error}"
    ) from last_error


def make_adapter(location: str, resolver):
    """Dispatch a contract's model Location to an adapter.

    ``http://``/``https://`` becomes an ExternalHttp adapter, ``.json``
    loads a builtin linear model through the resolver, anything else
    (including ``.onnx``) is unsupported.
    """
    if location.startswith(("http://", "https://")):
        return ExternalHttp(endpoint=location)
    if location.endswith(".json"):
        text = resolver.read_text(location)
        try:
            doc = json.loads(text)
            return BuiltinLinear(
                weights=tuple(tuple(float(v) for v in row) for row in doc["weights"]),
                bias=tuple(float(v) for v in doc["bias"]),
                class_names=tuple(str(c) for c in doc["classes"]),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise UnsupportedModelFormat(
                f"builtin model {location!r} is not a valid "
                f"weights/bias/classes document: {e}"
            ) from e
    raise UnsupportedModelFormat(
        f"cannot load a model from {location!r}; supported locations are "
        f".json built-in linear models and http(s) prediction endpoints"
    )


def adapter_to_config(adapter) -> dict:
    if isinstance(adapter, BuiltinLinear):
        return {
            "kind": "builtin_linear",
            "weights": [list(row) for row in adapter.weights],
            "bias": list(adapter.bias),
            "classes": list(adapter.class_names),
        }
    if isinstance(adapter, ExternalHttp):
        return {
            "kind": "external_http",
            "endpoint": adapter.endpoint,
            "timeout_ms": adapter.timeout_ms,
            "retries": adapter.retries,
        }
    raise TypeError(f"not an adapter: {adapter!r}")


def adapter_from_config(doc: dict):
    """Inverse of adapter_to_config. Raises ValueError on malformed configs."""
    if not isinstance(doc, dict):
        raise ValueError("adapter config must be an object")
    kind = doc.get("kind")
    if kind not in ("builtin_linear", "external_http"):
        raise ValueError(f"unknown adapter kind {kind!r}")
    try:
        if kind == "builtin_linear":
            return BuiltinLinear(
                weights=tuple(tuple(float(v) for v in row) for row in doc["weights"]),
                bias=tuple(float(v) for v in doc["bias"]),
                class_names=tuple(str(c) for c in doc["classes"]),
            )
        return ExternalHttp(endpoint=str(doc["endpoint"]),
                            timeout_ms=int(doc["timeout_ms"]),
                            retries=int(doc["retries"]))
    except (KeyError, TypeError, ValueError) as e:
        raise ValueError(f"malformed {kind} adapter config: {e}") from e


def _invoke_adapter(adapter, X: np.ndarray):
    try:
        if isinstance(adapter, BuiltinLinear):
            raw = builtin_predict(adapter, X)
        elif isinstance(adapter, ExternalHttp):
            raw = http_predict(adapter, X)
        elif hasattr(adapter, "predict"):
            raw = adapter.predict(X)
        elif callable(adapter):
            raw = adapter(X)
        else:
            raise AdapterFailure(f"cannot invoke adapter {adapter!r}")
    except AdapterFailure:
        raise
    except Exception as e:
        raise AdapterFailure(f"model call failed: {e}") from e
    if isinstance(raw, np.ndarray):
        raw = raw.tolist()
    return tuple(tuple(float(v) for v in row) for row in raw)


# -- deterministic checks ------------------------------------------------------


def check_probabilities_sum_to_one(pred, tolerance: float) -> SumToOneVerdict:
    """Every row must sum to 1 within tolerance with entries in
    [-tolerance, 1 + tolerance]."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    worst_row = None
    worst = 0.0
    for i, row in enumerate(pred):
        values = [float(v) for v in row]
        dev = abs(sum(values) - 1.0)
        for v in values:
            dev = max(dev, -v, v - 1.0)
        if dev > worst:
            worst, worst_row = dev, i
    return SumToOneVerdict(ok=worst <= tolerance, worst_row=worst_row,
                           worst_deviation=worst)


def _check_range(batch: RecordBatch, cond: RangeCheck):
    """Count cells of the named column outside [min, max]; fail closed on a
    missing column or non-numeric cells."""
    if cond.field not in batch.columns:
        return {"reason": "missing_column", "field": cond.field}
    bad = 0
    non_numeric = 0
    for v in batch.column(cond.field):
        if not _is_num(v):
            non_numeric += 1
        elif (cond.min is not None and v < cond.min) or (
            cond.max is not None and v > cond.max
        ):
            bad += 1
    if bad or non_numeric:
        return {"field": cond.field, "out_of_range": bad, "non_numeric": non_numeric}
    return None


# -- actions -------------------------------------------------------------------


def apply_action(action: str, report: ViolationReport, sink) -> str:
    """Log the report and return the disposition: "reject" for exception,
    "continue" otherwise. Logging is best-effort; a failing sink becomes a
    warning, never a lost disposition."""
    try:
        sink.append(report)
    except Exception as e:
        warnings.warn(f"violation log write failed: {e}", SinkFailureWarning,
                      stacklevel=2)
    return "reject" if action == "exception" else "continue"


# -- the guard -----------------------------------------------------------------


def _output_columns(adapter, preds) -> tuple[str, ...]:
    if isinstance(adapter, BuiltinLinear):
        return adapter.class_names
    width = len(preds[0]) if preds else 0
    return tuple(f"p_{j:02d}" for j in range(width))


def _evaluate_condition(bundle, name: str, cond, data: RecordBatch | None,
                        preds) -> tuple[str, float, dict] | None:
    """Returns (kind, p_violation, detail) when the condition is violated."""
    if isinstance(cond, SchemaMatches):
        schema = bundle.schemas.get(cond.schema)
        if schema is None:
            raise BundleInvariantBroken(f"bundle lacks schema {cond.schema!r}")
        verdict = check_schema(data, schema)
        if verdict.ok:
            return None
        shown = [
            {"row": v.row, "column": v.column, "reason": v.reason}
            for v in verdict.violations[:_DETAIL_MAX_ITEMS]
        ]
        return "schema", 1.0, {"violations": shown, "count": len(verdict.violations)}

    if isinstance(cond, DistributionMatches):
        detector = bundle.detectors.get(name)
        if detector is None:
            raise BundleInvariantBroken(f"bundle lacks a detector for {name}")
        try:
            verdict = evaluate_detector(detector, data, cond.trigger.confidence_threshold)
        except MLGuardError as e:
            # The batch is structurally incomparable to the training data
            # (missing feature, corrupt dtype, too few rows). Fail closed.
            return "distribution", 1.0, {"reason": "unevaluable", "error": str(e),
                                         "method": detector.method}
        if not verdict.violated:
            return None
        return "distribution", verdict.p_violation, {
            "method": verdict.method,
            "score": verdict.score,
            "per_feature": list(verdict.per_feature_detail or ()),
        }

    if isinstance(cond, RangeCheck):
        detail = _check_range(data, cond)
        return None if detail is None else ("range", 1.0, detail)

    if isinstance(cond, ProbabilitiesSumToOne):
        verdict = check_probabilities_sum_to_one(preds if preds is not None else (),
                                                 cond.tolerance)
        if verdict.ok:
            return None
        return "postcondition", 1.0, {"worst_row": verdict.worst_row,
                                      "worst_deviation": verdict.worst_deviation}

    raise BundleInvariantBroken(f"unknown condition type {type(cond).__name__}")


def guard_predict(bundle, batch: RecordBatch, *, sink=None, batch_id: int = 0,
                  adapter=None) -> GuardedOutput:
    """Run one batch through the guarded model under the bundle's contract.

    Preconditions run in contract order against the input; if any
    exception-action condition violates, the model is never invoked and the
    batch is rejected (remaining preconditions still evaluate, for
    reporting). Otherwise the adapter runs and postconditions check its
    output; an exception-action violation there suppresses the predictions.
    Warnings never alter predictions.
    """
    sink = sink if sink is not None else NullSink()
    adapter = adapter if adapter is not None else bundle.model_adapter
    log_warnings: list[ViolationReport] = []
    propagated: list[ViolationReport] = []
    rejected = False

    def handle(name: str, action: str, found) -> None:
        nonlocal rejected
        if found is None:
            return
        kind, p, detail = found
        report = ViolationReport(condition_name=name, kind=kind, p_violation=p,
                                 action_taken=action, detail=detail,
                                 batch_id=batch_id, timestamp=_now_iso())
        if apply_action(action, report, sink) == "reject":
            rejected = True
        elif action == "log_warning":
            log_warnings.append(report)
        else:
            propagated.append(report)

    for name, cond in bundle.contract.conditions():
        if not name.startswith("Preconditions."):
            continue
        handle(name, cond.action, _evaluate_condition(bundle, name, cond, batch, None))

    if rejected:
        return GuardedOutput(
            status="rejected", predictions=None, warnings=tuple(log_warnings),
            uncertainty={"violations": tuple(propagated)} if propagated else None,
        )

    try:
        X = numeric_matrix(batch, batch.columns)
    except MLGuardError as e:
        raise AdapterFailure(f"cannot build the model input matrix: {e}") from e
    preds = _invoke_adapter(adapter, X)

    out_batch: RecordBatch | None = None
    for name, cond in bundle.contract.conditions():
        if not name.startswith("Postconditions."):
            continue
        if isinstance(cond, ProbabilitiesSumToOne):
            handle(name, cond.action, _evaluate_condition(bundle, name, cond, None, preds))
            continue
        if out_batch is None:
            try:
                out_batch = RecordBatch(columns=_output_columns(adapter, preds),
                                        rows=preds)
            except ValueError as e:
                handle(name, cond.action,
                       ("postcondition", 1.0,
                        {"reason": "unevaluable", "error": str(e)}))
                continue
        handle(name, cond.action, _evaluate_condition(bundle, name, cond, out_batch, preds))

    return GuardedOutput(
        status="rejected" if rejected else "ok",
        predictions=None if rejected else preds,
        warnings=tuple(log_warnings),
        uncertainty={"violations": tuple(propagated)} if propagated else None,
    )
