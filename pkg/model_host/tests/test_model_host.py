"""Host behavior: model loading, the wire protocol, and agreement with the
in-process adapter it mirrors.

The conformance tests at the bottom drive the live host through the guarding
library, so they import it; the host package itself has no such dependency.
"""

from __future__ import annotations

import json
import math
import subprocess
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path

import numpy as np
import pytest

from model_host.server import (
    HostedModel,
    ModelLoadError,
    load_hosted_model,
    make_server,
    predict_probabilities,
)

MODEL_DOC = {"weights": [[0.25] * 4, [-0.25] * 4], "bias": [0.0, 0.1],
             "classes": ["neg", "pos"]}


def write_model(path: Path, doc=MODEL_DOC) -> Path:
    path.write_text(json.dumps(doc))
    return path


def post(base: str, body: bytes, path: str = "/v1/predict"):
    req = urllib.request.Request(base + path, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=10) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as e:
        return e.code, e.read()


def get(base: str, path: str):
    try:
        with urllib.request.urlopen(base + path, timeout=10) as resp:
            return resp.status, resp.read(), dict(resp.headers)
    except urllib.error.HTTPError as e:
        return e.code, e.read(), dict(e.headers)


@pytest.fixture(scope="module")
def model_file(tmp_path_factory) -> Path:
    return write_model(tmp_path_factory.mktemp("model") / "linear.json")


@pytest.fixture(scope="module")
def live_host(model_file):
    server = make_server(load_hosted_model(model_file), port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    host, port = server.server_address[:2]
    try:
        yield f"http://{host}:{port}"
    finally:
        server.shutdown()
        server.server_close()


class TestLoadModel:
    def test_valid_document(self, model_file):
        model = load_hosted_model(model_file)
        assert model.weights == ((0.25,) * 4, (-0.25,) * 4)
        assert model.bias == (0.0, 0.1)
        assert model.classes == ("neg", "pos")
        assert model.n_features == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(ModelLoadError, match="cannot read"):
            load_hosted_model(tmp_path / "nope.json")

    def test_not_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{ nope")
        with pytest.raises(ModelLoadError, match="not valid JSON"):
            load_hosted_model(path)

    def test_not_an_object(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("[1, 2]")
        with pytest.raises(ModelLoadError, match="JSON object"):
            load_hosted_model(path)

    @pytest.mark.parametrize("key", ["weights", "bias", "classes"])
    def test_missing_key(self, tmp_path, key):
        doc = dict(MODEL_DOC)
        del doc[key]
        path = write_model(tmp_path / "m.json", doc)
        with pytest.raises(ModelLoadError, match=key):
            load_hosted_model(path)

    @pytest.mark.parametrize("weights", [
        [], [[]], [[1.0, 2.0], [1.0]], [[1.0, "x"]], [[1.0, True]], "flat",
    ])
    def test_bad_weights(self, tmp_path, weights):
        doc = dict(MODEL_DOC, weights=weights)
        path = write_model(tmp_path / "m.json", doc)
        with pytest.raises(ModelLoadError, match="weights"):
            load_hosted_model(path)

    @pytest.mark.parametrize("bias", [[0.0], [0.0, "x"], 0.0])
    def test_bad_bias(self, tmp_path, bias):
        doc = dict(MODEL_DOC, bias=bias)
        path = write_model(tmp_path / "m.json", doc)
        with pytest.raises(ModelLoadError, match="bias"):
            load_hosted_model(path)

    @pytest.mark.parametrize("classes", [["only"], ["a", 2], "ab"])
    def test_bad_classes(self, tmp_path, classes):
        doc = dict(MODEL_DOC, classes=classes)
        path = write_model(tmp_path / "m.json", doc)
        with pytest.raises(ModelLoadError, match="classes"):
            load_hosted_model(path)


def zero_model(width: int = 2) -> HostedModel:
    return HostedModel(weights=((0.0,) * width, (0.0,) * width),
                       bias=(0.0, 0.0), classes=("a", "b"))


class TestPredict:
    def test_zero_model_is_symmetric(self):
        assert predict_probabilities(zero_model(), [[0.0, 0.0]]) == [[0.5, 0.5]]

    def test_empty_batch(self):
        assert predict_probabilities(zero_model(), []) == []

    def test_closed_form_logits(self):
        model = HostedModel(weights=((1.0, 0.0), (0.0, 1.0)), bias=(0.0, 0.0),
                            classes=("a", "b"))
        (row,) = predict_probabilities(model, [[1.0, 2.0]])
        assert row[0] == pytest.approx(1.0 / (1.0 + math.e), abs=1e-12)
        assert row[1] == pytest.approx(math.e / (1.0 + math.e), abs=1e-12)

    def test_rows_are_distributions(self):
        model = HostedModel(weights=((0.5, -1.0, 2.0), (0.0, 0.3, -0.7)),
                            bias=(0.1, -0.2), classes=("a", "b"))
        rng = np.random.default_rng(5)
        rows = predict_probabilities(model,
                                     rng.standard_normal((20, 3)).tolist())
        for row in rows:
            assert sum(row) == pytest.approx(1.0, abs=1e-12)
            assert all(0.0 <= v <= 1.0 for v in row)

    def test_saturated_logits_stay_finite(self):
        model = HostedModel(weights=((1.0,), (-1.0,)), bias=(0.0, 0.0),
                            classes=("a", "b"))
        (row,) = predict_probabilities(model, [[1e8]])
        assert row[0] == pytest.approx(1.0)
        assert math.isfinite(row[1])

    def test_deterministic(self):
        model = zero_model(3)
        rows = [[0.1, 0.2, 0.3], [-1.0, 2.0, 0.0]]
        assert predict_probabilities(model, rows) == (
            predict_probabilities(model, rows))


class TestEndpoints:
    def test_healthz(self, live_host):
        status, payload, headers = get(live_host, "/healthz")
        assert status == 200
        assert json.loads(payload) == {"status": "ok"}
        assert headers["Content-Type"] == "application/json"

    def test_predict_round_trip(self, live_host, model_file):
        instances = [[0.0, 0.0, 0.0, 0.0], [1.0, -2.0, 3.0, -4.0]]
        status, payload = post(live_host,
                               json.dumps({"instances": instances}).encode())
        assert status == 200
        doc = json.loads(payload)
        model = load_hosted_model(model_file)
        assert doc == {"probabilities": predict_probabilities(model,
                                                              instances)}

    def test_empty_instances(self, live_host):
        status, payload = post(live_host, b'{"instances": []}')
        assert status == 200
        assert json.loads(payload) == {"probabilities": []}

    @pytest.mark.parametrize("path", ["/", "/v2/predict", "/predict"])
    def test_unknown_paths(self, live_host, path):
        status, payload = post(live_host, b'{"instances": []}', path=path)
        assert status == 404
        assert "error" in json.loads(payload)
        status, payload, _ = get(live_host, path)
        assert status == 404
        assert "error" in json.loads(payload)

    @pytest.mark.parametrize("body", [
        b"{ nope",
        b"[]",
        b'{"rows": []}',
        b'{"instances": 5}',
        b'{"instances": [5]}',
        b'{"instances": [["a", "b", "c", "d"]]}',
        b'{"instances": [[true, 0, 0, 0]]}',
        b'{"instances": [[1.0, 2.0]]}',
    ])
    def test_malformed_bodies(self, live_host, body):
        status, payload = post(live_host, body)
        assert status == 400
        doc = json.loads(payload)
        assert isinstance(doc["error"], str) and doc["error"]

    def test_identical_requests_get_identical_responses(self, live_host):
        body = b'{"instances": [[0.25, -1.5, 0.75, 2.0]]}'
        first = post(live_host, body)
        second = post(live_host, body)
        assert first == second
        assert first[0] == 200


class TestConcurrency:
    def test_parallel_requests_do_not_cross_talk(self, live_host, model_file):
        model = load_hosted_model(model_file)
        n_threads = 8
        barrier = threading.Barrier(n_threads)
        results = [None] * n_threads

        def worker(i: int):
            instances = [[float(i)] * 4] * 3
            barrier.wait()
            for _ in range(5):
                status, payload = post(
                    live_host, json.dumps({"instances": instances}).encode())
                results[i] = (status, json.loads(payload)["probabilities"])

        threads = [threading.Thread(target=worker, args=(i,))
                   for i in range(n_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=30)
        for i, result in enumerate(results):
            assert result is not None
            status, probs = result
            assert status == 200
            assert probs == predict_probabilities(model, [[float(i)] * 4] * 3)


class TestCli:
    def test_help_exits_zero(self):
        proc = subprocess.run(["model-host", "--help"],
                              capture_output=True, text=True, timeout=30)
        assert proc.returncode == 0
        assert "--model" in proc.stdout and "--port" in proc.stdout

    def test_missing_arguments(self):
        proc = subprocess.run(["model-host"],
                              capture_output=True, text=True, timeout=30)
        assert proc.returncode == 2

    def test_malformed_model_fails_startup(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{ nope")
        proc = subprocess.run(
            ["model-host", "--model", str(bad), "--port", "0"],
            capture_output=True, text=True, timeout=30)
        assert proc.returncode == 1
        assert "error" in proc.stderr

    def test_serves_until_terminated(self, model_file):
        proc = subprocess.Popen(
            ["model-host", "--model", str(model_file), "--port", "0"],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        try:
            line = proc.stdout.readline().strip()
            assert line.startswith("serving "), line
            base = "http://" + line.rsplit("http://", 1)[1]
            deadline = time.monotonic() + 10
            while True:
                try:
                    status, payload, _ = get(base, "/healthz")
                    break
                except urllib.error.URLError:
                    assert time.monotonic() < deadline, "host never came up"
                    time.sleep(0.05)
            assert status == 200
            status, payload = post(base, b'{"instances": [[0, 0, 0, 0]]}')
            assert status == 200
            assert len(json.loads(payload)["probabilities"]) == 1
        finally:
            proc.terminate()
            proc.wait(timeout=10)


# -- conformance against the guarding library ------------------------------

CONTRACT_TEXT = """\
Contract:
  Model:
    Name: synth_model
    Location: /pretrained/linear8.json
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
        Method: likelihood_ratios_for_ood
      Trigger_conditions:
        Confidence_threshold: 0.95
      Action_if_violated: log_warning
    Schema_Matches:
      Dataset: input_steam
      Schema: /schema/synth
      Action_if_violated: exception
  Postconditions:
    Probabilities_sum_to_one:
      Dataset: output_stream
      Action_if_violated: exception
"""


@pytest.fixture(scope="module")
def guarded_bundle(tmp_path_factory):
    from mlguard.bundle import build_bundle
    from mlguard.contract import parse_contract
    from mlguard.harness import synth_dataset
    from mlguard.resources import FsResolver
    from mlguard.schema import FieldDef, SchemaDef, serialize_schema, \
        write_csv_file

    root = tmp_path_factory.mktemp("guard") / "ws"
    for sub in ("data", "schema", "pretrained", "docs"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    write_csv_file(synth_dataset(240, 4, seed=42), root / "data" / "train.csv")
    fields = tuple(FieldDef(name=f"f_{j:02d}", dtype="real", min=-50.0,
                            max=50.0, categories=None) for j in range(4))
    (root / "schema" / "synth.json").write_text(
        serialize_schema(SchemaDef(name="synth", fields=fields, metadata=())))
    (root / "pretrained" / "linear8.json").write_text(json.dumps(MODEL_DOC))
    (root / "docs" / "model.md").write_text("# synth model\n")
    spec = parse_contract(CONTRACT_TEXT)
    return build_bundle(spec, FsResolver(root), seed=3, out=root / "bundle")


def canon(reports):
    out = []
    for r in reports:
        doc = r.to_json_dict()
        doc.pop("timestamp")
        out.append(doc)
    return out


class TestWireConformance:
    def test_agrees_with_inprocess_predictions(self, live_host):
        from mlguard.guard import BuiltinLinear, builtin_predict

        adapter = BuiltinLinear(
            weights=tuple(tuple(row) for row in MODEL_DOC["weights"]),
            bias=tuple(MODEL_DOC["bias"]),
            class_names=tuple(MODEL_DOC["classes"]))
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            X = rng.standard_normal((n, 4)) * 3.0
            status, payload = post(
                live_host, json.dumps({"instances": X.tolist()}).encode())
            assert status == 200
            got = np.asarray(json.loads(payload)["probabilities"])
            expected = builtin_predict(adapter, X)
            assert got.shape == expected.shape
            assert np.max(np.abs(got - expected)) <= 1e-9

    def test_guarded_outputs_match_across_adapters(self, live_host,
                                                   guarded_bundle):
        from mlguard.guard import ExternalHttp, guard_predict
        from mlguard.harness import synth_dataset
        from mlguard.schema import RecordBatch

        http_adapter = ExternalHttp(endpoint=live_host, timeout_ms=5000,
                                    retries=1)
        clean = synth_dataset(50, 4, seed=11)
        drifted = RecordBatch(columns=clean.columns,
                              rows=tuple(tuple(v + 5.0 for v in row)
                                         for row in clean.rows))
        rows = [list(r) for r in synth_dataset(30, 4, seed=13).rows]
        rows[2][1] = 999.0
        invalid = RecordBatch(columns=clean.columns,
                              rows=tuple(tuple(r) for r in rows))

        for batch in (clean, drifted, invalid):
            local = guard_predict(guarded_bundle, batch)
            remote = guard_predict(guarded_bundle, batch,
                                   adapter=http_adapter)
            assert remote.status == local.status
            assert canon(remote.warnings) == canon(local.warnings)
            assert (remote.uncertainty is None) == (local.uncertainty is None)
            if local.predictions is None:
                assert remote.predictions is None
            else:
                a = np.asarray(local.predictions, dtype=np.float64)
                b = np.asarray(remote.predictions, dtype=np.float64)
                assert a.shape == b.shape
                assert np.max(np.abs(a - b)) <= 1e-9
