"""Minimal HTTP host for a linear softmax model.

Speaks the prediction wire protocol: POST /v1/predict with a JSON body
{"instances": [[num, ...], ...]} answers {"probabilities": [[num, ...], ...]};
GET /healthz reports liveness. The model document is the linear JSON format
({"weights", "bias", "classes"}) and is read-only after startup, so the
threading server needs no locks. Standard library only.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


class ModelLoadError(Exception):
    """The model file is missing, unreadable, or not a valid document."""


class BadRequest(Exception):
    """The request body does not follow the wire protocol."""


@dataclass(frozen=True)
class HostedModel:
    weights: tuple[tuple[float, ...], ...]
    bias: tuple[float, ...]
    classes: tuple[str, ...]

    @property
    def n_features(self) -> int:
        return len(self.weights[0])


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def load_hosted_model(path) -> HostedModel:
    """Read and validate a linear model document.

    Raises ModelLoadError on any problem, with a message naming it.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ModelLoadError(f"cannot read model file: {e}") from e
    try:
        doc = json.loads(text)
    except ValueError as e:
        raise ModelLoadError(f"model file is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ModelLoadError("model document must be a JSON object")
    missing = {"weights", "bias", "classes"} - set(doc)
    if missing:
        raise ModelLoadError(f"model document lacks {sorted(missing)}")

    weights = doc["weights"]
    if (not isinstance(weights, list) or not weights
            or not all(isinstance(row, list) and row for row in weights)):
        raise ModelLoadError("'weights' must be a non-empty matrix")
    width = len(weights[0])
    for row in weights:
        if len(row) != width:
            raise ModelLoadError("'weights' rows must all have the same length")
        if not all(_is_number(v) for v in row):
            raise ModelLoadError("'weights' entries must be numbers")

    bias = doc["bias"]
    if not isinstance(bias, list) or not all(_is_number(v) for v in bias):
        raise ModelLoadError("'bias' must be a list of numbers")
    if len(bias) != len(weights):
        raise ModelLoadError(
            f"'bias' has {len(bias)} entries for {len(weights)} classes")

    classes = doc["classes"]
    if not isinstance(classes, list) or not all(
            isinstance(c, str) for c in classes):
        raise ModelLoadError("'classes' must be a list of strings")
    if len(classes) != len(weights):
        raise ModelLoadError(
            f"'classes' has {len(classes)} entries for {len(weights)} classes")

    return HostedModel(weights=tuple(tuple(float(v) for v in row)
                                     for row in weights),
                       bias=tuple(float(v) for v in bias),
                       classes=tuple(classes))


def predict_probabilities(model: HostedModel, instances) -> list:
    """Probabilities for each input row: softmax(W x + b), stabilized by
    max-subtraction so saturated logits do not overflow."""
    out = []
    for x in instances:
        logits = [sum(w * v for w, v in zip(wrow, x)) + b
                  for wrow, b in zip(model.weights, model.bias)]
        top = max(logits)
        exps = [math.exp(z - top) for z in logits]
        total = sum(exps)
        out.append([e / total for e in exps])
    return out


def _parse_instances(body: bytes, n_features: int) -> list:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        raise BadRequest("request body is not valid JSON")
    if not isinstance(doc, dict) or "instances" not in doc:
        raise BadRequest("request must be a JSON object with an "
                         "'instances' field")
    instances = doc["instances"]
    if not isinstance(instances, list):
        raise BadRequest("'instances' must be a list of rows")
    for i, row in enumerate(instances):
        if not isinstance(row, list) or not all(_is_number(v) for v in row):
            raise BadRequest(f"instances[{i}] must be a list of numbers")
        if len(row) != n_features:
            raise BadRequest(f"instances[{i}] has {len(row)} features, "
                             f"the model expects {n_features}")
    return instances


class _Handler(BaseHTTPRequestHandler):
    server_version = "model-host/0.1"
    protocol_version = "HTTP/1.1"

    def _send_json(self, status: int, doc) -> None:
        payload = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        if self.path == "/healthz":
            self._send_json(200, {"status": "ok"})
        else:
            self._send_json(404, {"error": f"no such path: {self.path}"})

    def do_POST(self):
        if self.path != "/v1/predict":
            self._send_json(404, {"error": f"no such path: {self.path}"})
            return
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length)
        model = self.server.model
        try:
            instances = _parse_instances(body, model.n_features)
        except BadRequest as e:
            self._send_json(400, {"error": str(e)})
            return
        self._send_json(200,
                        {"probabilities": predict_probabilities(model,
                                                                instances)})

    def log_message(self, fmt, *args):
        pass


class ModelServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, model: HostedModel, address):
        super().__init__(address, _Handler)
        self.model = model


def make_server(model: HostedModel, port: int,
                host: str = "127.0.0.1") -> ModelServer:
    """Bind a server; port 0 picks a free port (see server_address)."""
    return ModelServer(model, (host, port))


def serve(model_path, port: int) -> None:
    """Load the model and answer requests until interrupted."""
    server = make_server(load_hosted_model(model_path), port)
    try:
        server.serve_forever()
    finally:
        server.server_close()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="model-host",
        description="Serve a linear model JSON file over the prediction "
                    "wire protocol.")
    parser.add_argument("--model", required=True,
                        help="path to the model JSON file")
    parser.add_argument("--port", required=True, type=int,
                        help="port to listen on (0 picks a free port)")
    args = parser.parse_args(argv)
    try:
        model = load_hosted_model(args.model)
        server = make_server(model, args.port)
    except (ModelLoadError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    host, port = server.server_address[:2]
    print(f"serving {args.model} on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
