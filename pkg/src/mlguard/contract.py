"""The contract specification language: parse, serialize, validate.

A contract is a YAML document with this shape::

    Contract:
      Model:
        Name: ...
        Location: ...
        Documentation: ...        # optional
      Data:
        - input_steam
        - output_stream
      Preconditions:
        Distribution_Matches:
          DatasetA: ...
          DatasetB: ...
          Validation_model:
            Type: out_of_distribution_detector
            Method: likelihood_ratios_for_ood   # optional
          Trigger_conditions:
            Confidence_threshold: 0.95
          Action_if_violated: log_warning
        Schema_Matches:
          Dataset: ...
          Schema: ...
          Action_if_violated: exception
        Range_Check:                            # optional extension
          Dataset: ...
          Field: ...
          Min: ...                              # optional
          Max: ...                              # optional
          Action_if_violated: exception
      Postconditions:
        Probabilities_sum_to_one:
          Dataset: ...
          Tolerance: 1e-6                       # optional
          Action_if_violated: exception

Key names are case-sensitive. Unknown keys inside known blocks are errors,
not silently ignored: contracts are safety artifacts and a typo must not
disable a check. Conditions evaluate in document order.
"""

from __future__ import annotations

from dataclasses import dataclass

import yaml

from .errors import (
    ContractSyntaxError,
    MissingRequiredField,
    ThresholdOutOfRange,
    UnexpectedKey,
    UnknownAction,
    UnknownConditionKind,
    UnknownDetectorMethod,
    UnknownDetectorType,
)

ACTIONS = ("log_warning", "exception", "propagate_uncertainty")
DETECTOR_TYPES = ("out_of_distribution_detector",)
DETECTOR_METHODS = (
    "likelihood_ratios_for_ood",
    "kolmogorov_smirnov",
    "mahalanobis_distance",
)
DEFAULT_TOLERANCE = 1e-6

KIND_DISTRIBUTION = "Distribution_Matches"
KIND_SCHEMA = "Schema_Matches"
KIND_PROBS = "Probabilities_sum_to_one"
KIND_RANGE = "Range_Check"
CONDITION_KINDS = (KIND_DISTRIBUTION, KIND_SCHEMA, KIND_PROBS, KIND_RANGE)


@dataclass(frozen=True)
class DataRef:
    """An opaque data identifier: a stream name or a dataset locator path."""

    id: str

    def is_path(self) -> bool:
        return self.id.startswith("/")


@dataclass(frozen=True)
class ModelRef:
    name: str
    location: str
    documentation: str | None = None


@dataclass(frozen=True)
class ValidationModelSpec:
    type: str
    method: str | None = None


@dataclass(frozen=True)
class TriggerConditions:
    confidence_threshold: float


@dataclass(frozen=True)
class DistributionMatches:
    dataset_a: DataRef
    dataset_b: DataRef
    validation_model: ValidationModelSpec
    trigger: TriggerConditions
    action: str

    kind = KIND_DISTRIBUTION


@dataclass(frozen=True)
class SchemaMatches:
    dataset: DataRef
    schema: str
    action: str

    kind = KIND_SCHEMA


@dataclass(frozen=True)
class ProbabilitiesSumToOne:
    dataset: DataRef
    action: str
    tolerance: float = DEFAULT_TOLERANCE

    kind = KIND_PROBS


@dataclass(frozen=True)
class RangeCheck:
    dataset: DataRef
    field: str
    action: str
    min: float | None = None
    max: float | None = None

    kind = KIND_RANGE


Condition = DistributionMatches | SchemaMatches | ProbabilitiesSumToOne | RangeCheck


@dataclass(frozen=True)
class ContractSpec:
    model: ModelRef
    data: tuple[DataRef, ...]
    preconditions: tuple[Condition, ...]
    postconditions: tuple[Condition, ...]

    def conditions(self):
        """Yield (condition_name, condition) pairs in document order."""
        for cond in self.preconditions:
            yield f"Preconditions.{cond.kind}", cond
        for cond in self.postconditions:
            yield f"Postconditions.{cond.kind}", cond


@dataclass(frozen=True)
class SpecDiagnostic:
    severity: str  # "error" | "warning"
    path: str
    message: str


def has_errors(diagnostics) -> bool:
    return any(d.severity == "error" for d in diagnostics)


class _StrictLoader(yaml.SafeLoader):
    """SafeLoader that rejects duplicate mapping keys."""


def _construct_mapping(loader, node, deep=False):
    mapping = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in mapping:
            raise ContractSyntaxError(f"duplicate key {key!r} in mapping")
        mapping[key] = loader.construct_object(value_node, deep=deep)
    return mapping


_StrictLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def _require_mapping(value, path):
    if value is None:
        raise MissingRequiredField("block is empty", path=path)
    if not isinstance(value, dict):
        raise ContractSyntaxError("expected a mapping", path=path)
    return value


def _no_extra_keys(mapping, allowed, path):
    for key in mapping:
        if key not in allowed:
            raise UnexpectedKey(f"unexpected key {key!r}", path=path)


def _req(mapping, key, path):
    if key not in mapping or mapping[key] is None:
        raise MissingRequiredField(f"missing required field {key!r}", path=f"{path}.{key}")
    return mapping[key]


def _req_str(mapping, key, path):
    v = _req(mapping, key, path)
    if not isinstance(v, str) or not v:
        raise ContractSyntaxError("expected a non-empty string", path=f"{path}.{key}")
    return v


def _opt_str(mapping, key, path):
    v = mapping.get(key)
    if v is None:
        return None
    if not isinstance(v, str) or not v:
        raise ContractSyntaxError("expected a non-empty string", path=f"{path}.{key}")
    return v


def _is_real(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _opt_real(mapping, key, path):
    v = mapping.get(key)
    if v is None:
        return None
    if not _is_real(v):
        raise ContractSyntaxError("expected a number", path=f"{path}.{key}")
    return float(v)


def _action(mapping, path):
    v = _req(mapping, "Action_if_violated", path)
    if v not in ACTIONS:
        raise UnknownAction(
            f"unknown action {v!r}; expected one of {', '.join(ACTIONS)}",
            path=f"{path}.Action_if_violated",
        )
    return v


def _parse_distribution(body, path) -> DistributionMatches:
    body = _require_mapping(body, path)
    _no_extra_keys(
        body,
        {"DatasetA", "DatasetB", "Validation_model", "Trigger_conditions", "Action_if_violated"},
        path,
    )
    dataset_a = DataRef(_req_str(body, "DatasetA", path))
    dataset_b = DataRef(_req_str(body, "DatasetB", path))

    vm_path = f"{path}.Validation_model"
    vm = _require_mapping(_req(body, "Validation_model", path), vm_path)
    _no_extra_keys(vm, {"Type", "Method"}, vm_path)
    vm_type = _req_str(vm, "Type", vm_path)
    if vm_type not in DETECTOR_TYPES:
        raise UnknownDetectorType(
            f"unknown validation model type {vm_type!r}", path=f"{vm_path}.Type"
        )
    vm_method = _opt_str(vm, "Method", vm_path)
    if vm_method is not None and vm_method not in DETECTOR_METHODS:
        raise UnknownDetectorMethod(
            f"unknown validation model method {vm_method!r}", path=f"{vm_path}.Method"
        )

    tc_path = f"{path}.Trigger_conditions"
    tc = _require_mapping(_req(body, "Trigger_conditions", path), tc_path)
    _no_extra_keys(tc, {"Confidence_threshold"}, tc_path)
    threshold = _req(tc, "Confidence_threshold", tc_path)
    if not _is_real(threshold):
        raise ContractSyntaxError("expected a number", path=f"{tc_path}.Confidence_threshold")
    threshold = float(threshold)
    if not 0.0 < threshold < 1.0:
        raise ThresholdOutOfRange(
            f"Confidence_threshold must lie strictly between 0 and 1, got {threshold}",
            path=f"{tc_path}.Confidence_threshold",
        )

    return DistributionMatches(
        dataset_a=dataset_a,
        dataset_b=dataset_b,
        validation_model=ValidationModelSpec(type=vm_type, method=vm_method),
        trigger=TriggerConditions(confidence_threshold=threshold),
        action=_action(body, path),
    )


def _parse_schema_matches(body, path) -> SchemaMatches:
    body = _require_mapping(body, path)
    _no_extra_keys(body, {"Dataset", "Schema", "Action_if_violated"}, path)
    return SchemaMatches(
        dataset=DataRef(_req_str(body, "Dataset", path)),
        schema=_req_str(body, "Schema", path),
        action=_action(body, path),
    )


def _parse_probs(body, path) -> ProbabilitiesSumToOne:
    body = _require_mapping(body, path)
    _no_extra_keys(body, {"Dataset", "Tolerance", "Action_if_violated"}, path)
    tolerance = _opt_real(body, "Tolerance", path)
    if tolerance is None:
        tolerance = DEFAULT_TOLERANCE
    elif tolerance <= 0:
        raise ThresholdOutOfRange("Tolerance must be positive", path=f"{path}.Tolerance")
    return ProbabilitiesSumToOne(
        dataset=DataRef(_req_str(body, "Dataset", path)),
        tolerance=tolerance,
        action=_action(body, path),
    )


def _parse_range_check(body, path) -> RangeCheck:
    body = _require_mapping(body, path)
    _no_extra_keys(body, {"Dataset", "Field", "Min", "Max", "Action_if_violated"}, path)
    lo = _opt_real(body, "Min", path)
    hi = _opt_real(body, "Max", path)
    if lo is not None and hi is not None and lo > hi:
        raise ContractSyntaxError(f"Min {lo} exceeds Max {hi}", path=path)
    return RangeCheck(
        dataset=DataRef(_req_str(body, "Dataset", path)),
        field=_req_str(body, "Field", path),
        min=lo,
        max=hi,
        action=_action(body, path),
    )


_CONDITION_PARSERS = {
    KIND_DISTRIBUTION: _parse_distribution,
    KIND_SCHEMA: _parse_schema_matches,
    KIND_PROBS: _parse_probs,
    KIND_RANGE: _parse_range_check,
}


def _parse_conditions(section, section_name) -> tuple[Condition, ...]:
    path = f"Contract.{section_name}"
    if section is None:
        return ()
    if not isinstance(section, dict):
        raise ContractSyntaxError("expected a mapping of conditions", path=path)
    out = []
    for kind, body in section.items():
        if kind not in _CONDITION_PARSERS:
            raise UnknownConditionKind(
                f"unknown condition kind {kind!r}", path=f"{path}.{kind}"
            )
        out.append(_CONDITION_PARSERS[kind](body, f"{path}.{kind}"))
    return tuple(out)


def parse_contract(text: str) -> ContractSpec:
    """Parse a contract document. Raises a ContractError subclass on any defect."""
    try:
        root = yaml.load(text, Loader=_StrictLoader)
    except ContractSyntaxError:
        raise
    except yaml.YAMLError as e:
        raise ContractSyntaxError(f"not well-formed YAML: {e}") from e
    if not isinstance(root, dict):
        raise ContractSyntaxError("document root must be a mapping")
    _no_extra_keys(root, {"Contract"}, path="(root)")
    if "Contract" not in root:
        raise MissingRequiredField("missing required field 'Contract'", path="Contract")
    body = _require_mapping(root["Contract"], "Contract")
    _no_extra_keys(body, {"Model", "Data", "Preconditions", "Postconditions"}, "Contract")

    model_path = "Contract.Model"
    model_map = _require_mapping(_req(body, "Model", "Contract"), model_path)
    _no_extra_keys(model_map, {"Name", "Location", "Documentation"}, model_path)
    model = ModelRef(
        name=_req_str(model_map, "Name", model_path),
        location=_req_str(model_map, "Location", model_path),
        documentation=_opt_str(model_map, "Documentation", model_path),
    )

    data_raw = body.get("Data")
    if data_raw is None:
        data: tuple[DataRef, ...] = ()
    elif isinstance(data_raw, list):
        refs = []
        for i, item in enumerate(data_raw):
            if not isinstance(item, str) or not item:
                raise ContractSyntaxError(
                    "Data entries must be non-empty strings", path=f"Contract.Data[{i}]"
                )
            refs.append(DataRef(item))
        data = tuple(refs)
    else:
        raise ContractSyntaxError("expected a list", path="Contract.Data")

    return ContractSpec(
        model=model,
        data=data,
        preconditions=_parse_conditions(body.get("Preconditions"), "Preconditions"),
        postconditions=_parse_conditions(body.get("Postconditions"), "Postconditions"),
    )


def _condition_doc(cond: Condition) -> dict:
    if isinstance(cond, DistributionMatches):
        vm: dict = {"Type": cond.validation_model.type}
        if cond.validation_model.method is not None:
            vm["Method"] = cond.validation_model.method
        return {
            "DatasetA": cond.dataset_a.id,
            "DatasetB": cond.dataset_b.id,
            "Validation_model": vm,
            "Trigger_conditions": {"Confidence_threshold": cond.trigger.confidence_threshold},
            "Action_if_violated": cond.action,
        }
    if isinstance(cond, SchemaMatches):
        return {
            "Dataset": cond.dataset.id,
            "Schema": cond.schema,
            "Action_if_violated": cond.action,
        }
    if isinstance(cond, ProbabilitiesSumToOne):
        doc: dict = {"Dataset": cond.dataset.id}
        if cond.tolerance != DEFAULT_TOLERANCE:
            doc["Tolerance"] = cond.tolerance
        doc["Action_if_violated"] = cond.action
        return doc
    if isinstance(cond, RangeCheck):
        doc = {"Dataset": cond.dataset.id, "Field": cond.field}
        if cond.min is not None:
            doc["Min"] = cond.min
        if cond.max is not None:
            doc["Max"] = cond.max
        doc["Action_if_violated"] = cond.action
        return doc
    raise TypeError(f"not a condition: {cond!r}")


def serialize_contract(spec: ContractSpec) -> str:
    """Render a ContractSpec back to YAML that re-parses to an equal value."""
    model: dict = {"Name": spec.model.name, "Location": spec.model.location}
    if spec.model.documentation is not None:
        model["Documentation"] = spec.model.documentation
    body: dict = {"Model": model}
    if spec.data:
        body["Data"] = [d.id for d in spec.data]
    body["Preconditions"] = {c.kind: _condition_doc(c) for c in spec.preconditions} or None
    body["Postconditions"] = {c.kind: _condition_doc(c) for c in spec.postconditions} or None
    return yaml.safe_dump({"Contract": body}, sort_keys=False, default_flow_style=False)


def _dataset_diagnostics(ref: DataRef, declared: set, env, path, role) -> list[SpecDiagnostic]:
    diags = []
    if ref.is_path():
        if role == "reference" and not env.exists(ref.id):
            diags.append(
                SpecDiagnostic("error", path, f"training dataset {ref.id!r} does not resolve")
            )
    elif ref.id not in declared:
        diags.append(
            SpecDiagnostic("error", path, f"dataset id {ref.id!r} is not declared under Data")
        )
    return diags


def validate_contract(spec: ContractSpec, env) -> list[SpecDiagnostic]:
    """Cross-reference and resolvability checks over a parsed contract.

    Errors: a stream-style DataRef used by a condition but not declared under
    Data; an unresolvable Schema locator; a Distribution_Matches whose
    DatasetB (the training reference, which must be materializable) does not
    resolve. Warnings: missing or unresolvable model documentation.
    """
    diags: list[SpecDiagnostic] = []
    declared = {d.id for d in spec.data}

    if spec.model.documentation is None:
        diags.append(
            SpecDiagnostic("warning", "Contract.Model.Documentation",
                           "model has no documentation locator")
        )
    elif not env.exists(spec.model.documentation):
        diags.append(
            SpecDiagnostic("warning", "Contract.Model.Documentation",
                           f"documentation {spec.model.documentation!r} does not resolve")
        )

    for name, cond in spec.conditions():
        path = f"Contract.{name}"
        if isinstance(cond, DistributionMatches):
            diags += _dataset_diagnostics(cond.dataset_a, declared, env, f"{path}.DatasetA", "stream")
            diags += _dataset_diagnostics(cond.dataset_b, declared, env, f"{path}.DatasetB", "reference")
        elif isinstance(cond, SchemaMatches):
            diags += _dataset_diagnostics(cond.dataset, declared, env, f"{path}.Dataset", "stream")
            if not env.exists(cond.schema):
                diags.append(
                    SpecDiagnostic("error", f"{path}.Schema",
                                   f"schema {cond.schema!r} does not resolve")
                )
        else:
            diags += _dataset_diagnostics(cond.dataset, declared, env, f"{path}.Dataset", "stream")
    return diags
