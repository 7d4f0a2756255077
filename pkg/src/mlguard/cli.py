"""Command-line front end.

Subcommands: ``check`` (static contract validation), ``train`` (build a
guard bundle), ``run`` (guard a CSV batch stream), ``replay`` (drive a
stream with an injected shift and report detection stats), ``calibrate``
(fold operator feedback into a bundle's detectors).

Exit codes: 0 success; 1 contract invalid or batch rejected; 2 usage
errors; 3 I/O or internal failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bundle import build_bundle, load_bundle, write_bundle
from .contract import (
    DistributionMatches,
    parse_contract,
    validate_contract,
)
from .detectors import recalibrate_with_feedback
from .errors import (
    ContractError,
    MLGuardError,
    TrainingFailed,
    UnsupportedModelFormat,
    ValidationFailed,
)
from .guard import NullSink, ViolationLog, guard_predict
from .harness import parse_shift, replay, report_to_json_dict, split_batches
from .resources import FsResolver
from .schema import read_csv_file

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlguard",
                                     description="Contract guards for ML models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="validate a contract without training")
    p.add_argument("contract", help="path to the contract YAML")
    p.add_argument("--data-root", default=None,
                   help="root for resolving contract locators (default: the contract's directory)")

    p = sub.add_parser("train", help="train detectors and write a guard bundle")
    p.add_argument("contract", help="path to the contract YAML")
    p.add_argument("--data-root", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="guard a CSV stream with a trained bundle")
    p.add_argument("bundle", help="trained bundle directory")
    p.add_argument("--input", required=True)
    p.add_argument("--batch-size", type=int, default=None,
                   help="rows per batch (default: the whole file as one batch)")
    p.add_argument("--output", default=None,
                   help="write result JSON lines here instead of standard output")
    p.add_argument("--log", default=None, help="JSON-lines violation log path")

    p = sub.add_parser("replay", help="replay a stream with an injected shift")
    p.add_argument("bundle", help="trained bundle directory")
    p.add_argument("--input", required=True)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--shift", default="none",
                   help="none | mean:S[:F] | scale:K[:F] | drop:COL | corrupt:COL:VAL")
    p.add_argument("--onset", type=int, default=None,
                   help="first shifted batch index")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log", default=None)
    p.add_argument("--report", default=None, help="write the report JSON here too")

    p = sub.add_parser("calibrate", help="recalibrate detectors from labeled feedback")
    p.add_argument("bundle", help="trained bundle directory")
    p.add_argument("--feedback", required=True,
                   help="CSV with header batch_file,label; paths are relative to it")
    p.add_argument("--out", required=True)

    return parser


def _resolver_for(contract_path: Path, data_root) -> FsResolver:
    root = Path(data_root) if data_root else contract_path.parent
    return FsResolver(root)


def _cmd_check(args) -> int:
    path = Path(args.contract)
    try:
        spec = parse_contract(path.read_text(encoding="utf-8"))
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    diagnostics = validate_contract(spec, _resolver_for(path, args.data_root))
    for d in diagnostics:
        print(f"{d.severity}: {d.path}: {d.message}",
              file=sys.stderr if d.severity == "error" else sys.stdout)
    if any(d.severity == "error" for d in diagnostics):
        return EXIT_CONTRACT
    n = len(spec.preconditions) + len(spec.postconditions)
    print(f"OK: {spec.model.name}, {n} conditions")
    return EXIT_OK


def _cmd_train(args) -> int:
    path = Path(args.contract)
    try:
        spec = parse_contract(path.read_text(encoding="utf-8"))
        bundle = build_bundle(spec, _resolver_for(path, args.data_root),
                              args.seed, args.out)
    except (ContractError, ValidationFailed, TrainingFailed, UnsupportedModelFormat) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONTRACT
    for name, model in bundle.detectors.items():
        print(f"trained {name}: {model.method}")
    print(f"bundle written to {bundle.root}")
    return EXIT_OK


def _output_json(result, batch_id: int) -> dict:
    doc = {"batch_id": batch_id, "status": result.status}
    if result.predictions is not None:
        doc["predictions"] = [list(row) for row in result.predictions]
    if result.warnings:
        doc["warnings"] = [r.to_json_dict() for r in result.warnings]
    if result.uncertainty is not None:
        doc["uncertainty"] = {
            "violations": [r.to_json_dict() for r in result.uncertainty["violations"]]
        }
    return doc


def _cmd_run(args) -> int:
    if args.batch_size is not None and args.batch_size <= 0:
        print("usage error: --batch-size must be positive", file=sys.stderr)
        return EXIT_USAGE
    bundle = load_bundle(args.bundle)
    data = read_csv_file(args.input)
    batches = split_batches(data, args.batch_size) if args.batch_size else [data]
    sink = ViolationLog(args.log) if args.log else NullSink()
    out_fh = open(args.output, "w", encoding="utf-8") if args.output else None
    any_rejected = False
    try:
        for i, batch in enumerate(batches):
            result = guard_predict(bundle, batch, sink=sink, batch_id=i)
            any_rejected = any_rejected or result.status == "rejected"
            line = json.dumps(_output_json(result, i))
            if out_fh is not None:
                out_fh.write(line + "\n")
            else:
                print(line)
    finally:
        if out_fh is not None:
            out_fh.close()
    return EXIT_CONTRACT if any_rejected else EXIT_OK


def _cmd_replay(args) -> int:
    if args.batch_size <= 0:
        print("usage error: --batch-size must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        shift = parse_shift(args.shift)
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    bundle = load_bundle(args.bundle)
    data = read_csv_file(args.input)
    batches = split_batches(data, args.batch_size)
    sink = ViolationLog(args.log) if args.log else None
    report = replay(bundle, batches, shift, args.onset, seed=args.seed, sink=sink)
    doc = report_to_json_dict(report)
    print(json.dumps(doc, indent=2))
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _read_feedback(path: Path) -> list[tuple]:
    table = read_csv_file(path)
    if tuple(table.columns) != ("batch_file", "label"):
        raise ValueError("feedback CSV must have exactly the columns batch_file,label")
    items = []
    for fname, label in table.rows:
        items.append((read_csv_file(path.parent / str(fname)), str(label)))
    return items


def _cmd_calibrate(args) -> int:
    bundle = load_bundle(args.bundle)
    try:
        feedback = _read_feedback(Path(args.feedback))
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    detectors = dict(bundle.detectors)
    try:
        for name, cond in bundle.contract.conditions():
            if isinstance(cond, DistributionMatches) and name.startswith("Preconditions."):
                detectors[name] = recalibrate_with_feedback(detectors[name], feedback)
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    write_bundle(bundle.contract, bundle.schemas, detectors, bundle.model_adapter,
                 bundle.manifest.get("created_with_seed", 0), args.out)
    out = load_bundle(args.out)
    print(f"recalibrated bundle written to {out.root}")
    return EXIT_OK


_COMMANDS = {
    "check": _cmd_check,
    "train": _cmd_train,
    "run": _cmd_run,
    "replay": _cmd_replay,
    "calibrate": _cmd_calibrate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except MLGuardError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
