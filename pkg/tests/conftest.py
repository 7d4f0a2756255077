"""Shared fixtures: the canonical example contract and a synthetic workspace.

The workspace builder lays out the directory convention the CLI expects:
contract.yaml at the root, datasets under data/, schemas under schema/, a
builtin model under pretrained/. Most tests train on a small dataset to
stay fast; the acceptance suite builds its own full-size workspaces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from mlguard.bundle import build_bundle
from mlguard.contract import parse_contract
from mlguard.guard import BuiltinLinear, builtin_predict
from mlguard.harness import synth_dataset
from mlguard.resources import FsResolver
from mlguard.schema import FieldDef, SchemaDef, serialize_schema, write_csv_file

# The reference contract document for a guarded seizure-detection model.
# Kept verbatim, including the `input_steam` stream name: parsers must
# accept it exactly as written.
CANONICAL_CONTRACT = """\
Contract:
   Model:
      Name: seizure_detection_ml_model
      Location: /pretrained/seizure_model.onnx
      Documentation: /doc/seizure_model_card.html
   Data:
      - input_steam
      - output_stream
      - /data/eeg_train
   Preconditions:
      Distribution_Matches:
         DatasetA: input_steam
         DatasetB: /data/eeg_train
         Validation_model:
            Type: out_of_distribution_detector
            Method: likelihood_ratios_for_ood
         Trigger_conditions:
            Confidence_threshold: 0.95
         Action_if_violated: log_warning
      Schema_Matches:
         Dataset: input_steam
         Schema: /schema/eeg-10-20-system-256hz
         Action_if_violated: exception
   Postconditions:
      Probabilities_sum_to_one:
         Dataset: output_stream
         Action_if_violated: exception
"""


def contract_text(*, location: str = "/pretrained/linear8.json",
                  method: str = "likelihood_ratios_for_ood",
                  confidence: float = 0.95,
                  dm_action: str = "log_warning",
                  schema_action: str = "exception",
                  post_action: str = "exception") -> str:
    return f"""\
Contract:
  Model:
    Name: synth_model
    Location: {location}
    Documentation: /docs/model.md
  Data:
    - input_steam
    - output_stream
    - /data/train
  Preconditions:
    Distribution_Matches:
      DatasetA: input_steam
      DatasetB: /data/train
      Validation_model:
        Type: out_of_distribution_detector
        Method: {method}
      Trigger_conditions:
        Confidence_threshold: {confidence}
      Action_if_violated: {dm_action}
    Schema_Matches:
      Dataset: input_steam
      Schema: /schema/synth
      Action_if_violated: {schema_action}
  Postconditions:
    Probabilities_sum_to_one:
      Dataset: output_stream
      Action_if_violated: {post_action}
"""


@dataclass
class Workspace:
    root: Path
    contract_path: Path
    spec: object
    env: FsResolver
    n_features: int

    def batch(self, n_rows: int, seed: int):
        return synth_dataset(n_rows, self.n_features, seed=seed)


def make_workspace(root: Path, *, n_train: int = 240, n_features: int = 4,
                   train_seed: int = 42, bound: float = 50.0,
                   **contract_kwargs) -> Workspace:
    root.mkdir(parents=True, exist_ok=True)
    for sub in ("data", "schema", "pretrained", "docs"):
        (root / sub).mkdir(exist_ok=True)

    train = synth_dataset(n_train, n_features, seed=train_seed)
    write_csv_file(train, root / "data" / "train.csv")

    fields = tuple(
        FieldDef(name=f"f_{j:02d}", dtype="real", min=-bound, max=bound,
                 categories=None)
        for j in range(n_features)
    )
    schema = SchemaDef(name="synth", fields=fields, metadata=())
    (root / "schema" / "synth.json").write_text(serialize_schema(schema))

    rng_w = [[0.25] * n_features, [-0.25] * n_features]
    model_doc = {"weights": rng_w, "bias": [0.0, 0.1], "classes": ["neg", "pos"]}
    (root / "pretrained" / "linear8.json").write_text(json.dumps(model_doc))
    (root / "docs" / "model.md").write_text("# synth model\n")

    text = contract_text(**contract_kwargs)
    path = root / "contract.yaml"
    path.write_text(text)
    return Workspace(root=root, contract_path=path, spec=parse_contract(text),
                     env=FsResolver(root), n_features=n_features)


@pytest.fixture
def workspace(tmp_path) -> Workspace:
    return make_workspace(tmp_path / "ws")


@pytest.fixture(scope="session")
def shared_workspace(tmp_path_factory) -> Workspace:
    return make_workspace(tmp_path_factory.mktemp("ws") / "ws")


@pytest.fixture(scope="session")
def shared_bundle(shared_workspace):
    return build_bundle(shared_workspace.spec, shared_workspace.env, seed=3,
                        out=shared_workspace.root / "bundle")


class CountingAdapter:
    """Delegates to a BuiltinLinear while counting invocations."""

    def __init__(self, inner: BuiltinLinear):
        self.inner = inner
        self.calls = 0

    def predict(self, X):
        self.calls += 1
        return builtin_predict(self.inner, X)
