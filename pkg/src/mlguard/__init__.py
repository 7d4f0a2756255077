"""Contract guards for deployed ML models.

Write a contract over a model's input and output streams, train the
detectors it names into a frozen bundle, and wrap every prediction call
in guard_predict, which enforces the contract's pre- and postconditions.
"""

from .bundle import GuardBundle, build_bundle, load_bundle, write_bundle
from .contract import (
    ContractSpec,
    DistributionMatches,
    ProbabilitiesSumToOne,
    RangeCheck,
    SchemaMatches,
    parse_contract,
    serialize_contract,
    validate_contract,
)
from .detectors import (
    TrainConfig,
    calibrate_threshold,
    evaluate,
    recalibrate_with_feedback,
    train_detector,
)
from .errors import MLGuardError
from .guard import (
    BuiltinLinear,
    ExternalHttp,
    GuardedOutput,
    ListSink,
    NullSink,
    ViolationLog,
    ViolationReport,
    guard_predict,
)
from .harness import inject_shift, parse_shift, replay, synth_dataset
from .resources import FsResolver, MemResolver
from .schema import (
    RecordBatch,
    SchemaDef,
    check_schema,
    infer_schema,
    load_schema,
    read_csv_file,
    read_csv_text,
    write_csv_file,
    write_csv_text,
)

__version__ = "0.1.0"

__all__ = [
    "BuiltinLinear",
    "ContractSpec",
    "DistributionMatches",
    "ExternalHttp",
    "FsResolver",
    "GuardBundle",
    "GuardedOutput",
    "ListSink",
    "MLGuardError",
    "MemResolver",
    "NullSink",
    "ProbabilitiesSumToOne",
    "RangeCheck",
    "RecordBatch",
    "SchemaDef",
    "SchemaMatches",
    "TrainConfig",
    "ViolationLog",
    "ViolationReport",
    "build_bundle",
    "calibrate_threshold",
    "check_schema",
    "evaluate",
    "guard_predict",
    "infer_schema",
    "inject_shift",
    "load_bundle",
    "load_schema",
    "parse_contract",
    "parse_shift",
    "read_csv_file",
    "read_csv_text",
    "recalibrate_with_feedback",
    "replay",
    "serialize_contract",
    "synth_dataset",
    "train_detector",
    "validate_contract",
    "write_bundle",
    "write_csv_file",
    "write_csv_text",
]
