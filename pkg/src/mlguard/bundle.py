"""Self-contained guard bundles.

A bundle directory holds everything guard_predict needs, frozen at train
time: the canonical contract, the schemas it references, one trained
detector per Distribution_Matches condition, and the model adapter
config. ``manifest.json`` pins a sha256 digest for every entry, so any
single-byte change is caught at load time and named. Bundles contain no
timestamps: building twice from the same contract, data, and seed yields
byte-identical trees.

Layout::

    contract.yaml                    canonical re-serialized contract
    schemas/<name>.json              one per referenced schema locator
    detectors/<condition>.json       e.g. Preconditions.Distribution_Matches.json
    adapter.json                     model adapter config
    WRAPPER.md                       human-readable summary (unverified)
    manifest.json                    digests; written last
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .contract import (
    ContractSpec,
    DistributionMatches,
    SchemaMatches,
    parse_contract,
    serialize_contract,
    validate_contract,
)
from .detectors import (
    METHOD_KS,
    DEFAULT_METHOD,
    TrainConfig,
    deserialize_detector,
    serialize_detector,
    train_detector,
)
from .errors import (
    BundleInvariantBroken,
    DigestMismatch,
    IoFailure,
    MissingEntry,
    MLGuardError,
    TrainingFailed,
    ValidationFailed,
    VersionUnsupported,
)
from .guard import adapter_from_config, adapter_to_config, make_adapter
from .schema import SchemaDef, load_schema, parse_schema_document, serialize_schema, read_csv_text

BUNDLE_FORMAT_VERSION = 1
DIGEST_ALGORITHM = "sha256"
MANIFEST_NAME = "manifest.json"
CONTRACT_NAME = "contract.yaml"
ADAPTER_NAME = "adapter.json"
WRAPPER_NAME = "WRAPPER.md"

ROLE_CONTRACT = "contract"
ROLE_SCHEMA = "schema"
ROLE_DETECTOR = "detector"
ROLE_ADAPTER = "adapter"
ROLES = (ROLE_ADAPTER, ROLE_CONTRACT, ROLE_DETECTOR, ROLE_SCHEMA)

_SAFE_CHARS = re.compile(r"[^A-Za-z0-9._-]")


@dataclass(frozen=True)
class GuardBundle:
    """A loaded bundle: the parsed contract plus its trained companions.

    ``detectors`` is keyed by condition name (``Preconditions.Distribution_Matches``),
    ``schemas`` by the contract's schema locator.
    """

    contract: ContractSpec
    detectors: dict
    schemas: dict
    model_adapter: object
    manifest: dict
    root: Path | None = None


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _sanitize(locator: str) -> str:
    name = _SAFE_CHARS.sub("_", locator.lstrip("/"))
    return name or "schema"


def schema_file_map(spec: ContractSpec) -> dict[str, str]:
    """Map each referenced schema locator to its bundle-relative file path.

    Derived purely from the contract, in document order, so a loader can
    rebuild the exact map from contract.yaml alone.
    """
    out: dict[str, str] = {}
    used: set[str] = set()
    for _, cond in spec.conditions():
        if not isinstance(cond, SchemaMatches) or cond.schema in out:
            continue
        base = _sanitize(cond.schema)
        candidate, i = base, 2
        while candidate in used:
            candidate = f"{base}_{i}"
            i += 1
        used.add(candidate)
        out[cond.schema] = f"schemas/{candidate}.json"
    return out


def _detector_path(condition_name: str) -> str:
    return f"detectors/{condition_name}.json"


def _wrapper_text(spec: ContractSpec, detectors: dict, seed: int) -> str:
    lines = [
        "# Guarded model bundle",
        "",
        f"Model: {spec.model.name} ({spec.model.location})",
        f"Training seed: {seed}",
        "",
        "## Conditions",
        "",
    ]
    for name, cond in spec.conditions():
        if isinstance(cond, DistributionMatches):
            model = detectors.get(name)
            method = model.method if model is not None else (cond.validation_model.method or DEFAULT_METHOD)
            lines.append(f"- {name}: {method}, confidence "
                         f"{cond.trigger.confidence_threshold}, on violation {cond.action}")
        else:
            lines.append(f"- {name}: on violation {cond.action}")
    lines += [
        "",
        "Load with `mlguard.bundle.load_bundle(path)`; every entry is digest-",
        "pinned in manifest.json and verified at load time.",
        "",
    ]
    return "\n".join(lines)


def write_bundle(spec: ContractSpec, schemas: dict, detectors: dict, adapter,
                 seed: int, out) -> Path:
    """Write a bundle tree from in-memory parts; manifest goes last."""
    root = Path(out)
    files: dict[str, tuple[str, bytes]] = {}
    contract_bytes = serialize_contract(spec).encode("utf-8")
    files[CONTRACT_NAME] = (ROLE_CONTRACT, contract_bytes)
    for locator, rel in schema_file_map(spec).items():
        files[rel] = (ROLE_SCHEMA, serialize_schema(schemas[locator]).encode("utf-8"))
    for name, model in detectors.items():
        files[_detector_path(name)] = (ROLE_DETECTOR, serialize_detector(model).encode("utf-8"))
    adapter_json = json.dumps(adapter_to_config(adapter), indent=2, sort_keys=True) + "\n"
    files[ADAPTER_NAME] = (ROLE_ADAPTER, adapter_json.encode("utf-8"))

    entries = sorted(
        ({"path": rel, "role": role, "digest": sha256_hex(data)}
         for rel, (role, data) in files.items()),
        key=lambda e: e["path"],
    )
    manifest = {
        "bundle_format_version": BUNDLE_FORMAT_VERSION,
        "digest_algorithm": DIGEST_ALGORITHM,
        "contract_digest": sha256_hex(contract_bytes),
        "created_with_seed": seed,
        "entries": entries,
    }
    try:
        root.mkdir(parents=True, exist_ok=True)
        for rel, (_, data) in files.items():
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        (root / WRAPPER_NAME).write_text(_wrapper_text(spec, detectors, seed),
                                         encoding="utf-8")
        (root / MANIFEST_NAME).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot write bundle at {root}: {e}") from e
    return root


def build_bundle(spec: ContractSpec, env, seed: int, out) -> GuardBundle:
    """Validate, train, and freeze a bundle, then load it back.

    Returning the loaded bundle makes the round trip part of the build:
    what the caller gets is exactly what any later load_bundle will see.
    """
    diagnostics = validate_contract(spec, env)
    errors = [d for d in diagnostics if d.severity == "error"]
    if errors:
        raise ValidationFailed(
            "contract failed validation: "
            + "; ".join(f"{d.path}: {d.message}" for d in errors)
        )

    adapter = make_adapter(spec.model.location, env)

    schemas: dict[str, SchemaDef] = {}
    for locator in schema_file_map(spec):
        try:
            schemas[locator] = load_schema(locator, env)
        except MLGuardError as e:
            raise ValidationFailed(f"schema {locator!r}: {e}") from e

    detectors: dict[str, object] = {}
    for name, cond in spec.conditions():
        if not isinstance(cond, DistributionMatches):
            continue
        try:
            data = read_csv_text(env.read_text(cond.dataset_b.id))
            config = TrainConfig(seed=seed,
                                 confidence=cond.trigger.confidence_threshold)
            detectors[name] = train_detector(cond.validation_model, data, config)
        except (MLGuardError, ValueError) as e:
            raise TrainingFailed(f"{name}: {e}") from e

    write_bundle(spec, schemas, detectors, adapter, seed, out)
    return load_bundle(out)


def _manifest_entries(manifest: dict) -> list[dict]:
    entries = manifest.get("entries")
    if not isinstance(entries, list):
        raise VersionUnsupported("manifest has no entries list")
    for entry in entries:
        if (not isinstance(entry, dict)
                or not all(isinstance(entry.get(k), str) for k in ("path", "role", "digest"))):
            raise VersionUnsupported("manifest entries need path, role, and digest strings")
        if entry["role"] not in ROLES:
            raise VersionUnsupported(f"unknown manifest entry role {entry['role']!r}")
    return entries


def load_bundle(path) -> GuardBundle:
    """Load and verify a bundle directory.

    Every manifest entry must exist and hash to its pinned digest; a
    mismatch names the corrupted entries. Content that passes the digest
    check but fails to parse means the bundle was built wrong, which is
    reported as BundleInvariantBroken.
    """
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingEntry(f"{MANIFEST_NAME} is missing from {root}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoFailure(f"cannot read {manifest_path}: {e}") from e
    except ValueError as e:
        raise IoFailure(f"{MANIFEST_NAME} is not valid JSON: {e}") from e
    if not isinstance(manifest, dict):
        raise VersionUnsupported("manifest must be a JSON object")
    version = manifest.get("bundle_format_version")
    if version != BUNDLE_FORMAT_VERSION:
        raise VersionUnsupported(
            f"bundle_format_version {version!r} is not supported "
            f"(this runtime reads version {BUNDLE_FORMAT_VERSION})"
        )
    if manifest.get("digest_algorithm") != DIGEST_ALGORITHM:
        raise VersionUnsupported(
            f"digest_algorithm {manifest.get('digest_algorithm')!r} is not supported"
        )

    entries = _manifest_entries(manifest)
    by_path: dict[str, dict] = {}
    corrupted: list[str] = []
    for entry in entries:
        file_path = root / entry["path"]
        if not file_path.is_file():
            raise MissingEntry(f"bundle entry {entry['path']!r} is missing")
        try:
            digest = _file_digest(file_path)
        except OSError as e:
            raise IoFailure(f"cannot read bundle entry {entry['path']!r}: {e}") from e
        if digest != entry["digest"]:
            corrupted.append(entry["path"])
        by_path[entry["path"]] = entry
    if corrupted:
        raise DigestMismatch(
            "digest mismatch for bundle entries: " + ", ".join(sorted(corrupted))
        )

    if CONTRACT_NAME not in by_path:
        raise MissingEntry(f"manifest lists no {CONTRACT_NAME} entry")
    contract_bytes = (root / CONTRACT_NAME).read_bytes()
    if manifest.get("contract_digest") != sha256_hex(contract_bytes):
        raise DigestMismatch("contract_digest does not match contract.yaml")

    try:
        spec = parse_contract(contract_bytes.decode("utf-8"))
    except MLGuardError as e:
        raise BundleInvariantBroken(f"bundled contract does not parse: {e}") from e

    schemas: dict[str, SchemaDef] = {}
    for locator, rel in schema_file_map(spec).items():
        if rel not in by_path:
            raise MissingEntry(f"manifest lists no entry for schema {locator!r} ({rel})")
        try:
            schemas[locator] = parse_schema_document((root / rel).read_text(encoding="utf-8"))
        except MLGuardError as e:
            raise BundleInvariantBroken(f"bundled schema {locator!r} is invalid: {e}") from e

    detectors: dict[str, object] = {}
    for name, cond in spec.conditions():
        if not isinstance(cond, DistributionMatches):
            continue
        rel = _detector_path(name)
        if rel not in by_path:
            raise MissingEntry(f"manifest lists no detector entry for {name} ({rel})")
        try:
            model = deserialize_detector((root / rel).read_text(encoding="utf-8"))
        except MLGuardError as e:
            raise BundleInvariantBroken(f"bundled detector for {name} is invalid: {e}") from e
        expected = cond.validation_model.method or DEFAULT_METHOD
        if model.method != expected:
            raise BundleInvariantBroken(
                f"detector for {name} uses method {model.method!r}, contract says {expected!r}"
            )
        confidence = cond.trigger.confidence_threshold
        stored = 1.0 - model.alpha if model.method == METHOD_KS else model.confidence
        if abs(stored - confidence) > 1e-12:
            raise BundleInvariantBroken(
                f"detector for {name} was calibrated at confidence {stored}, "
                f"contract says {confidence}"
            )
        detectors[name] = model

    if ADAPTER_NAME not in by_path:
        raise MissingEntry(f"manifest lists no {ADAPTER_NAME} entry")
    try:
        adapter = adapter_from_config(json.loads((root / ADAPTER_NAME).read_text(encoding="utf-8")))
    except (ValueError, KeyError, TypeError) as e:
        raise BundleInvariantBroken(f"bundled adapter config is invalid: {e}") from e

    return GuardBundle(contract=spec, detectors=detectors, schemas=schemas,
                       model_adapter=adapter, manifest=manifest, root=root)
