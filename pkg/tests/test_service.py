import json
import socket
import subprocess
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, HTTPServer

import httpx
import numpy as np
import pytest
from fastapi.testclient import TestClient

from whybox.explain import canonical_json
from whybox.schema import schema_to_dict
from whybox.service import Store, create_app, main
from whybox.surrogate import equation_to_dict
from whybox.woodward import certificate_to_dict


JONES_SCHEMA_DOC = {
    "features": [
        {"name": "income", "kind": "numeric", "range": [0, 200000]},
        {"name": "age", "kind": "numeric", "range": [18, 100], "immutable": True},
        {"name": "education", "kind": "categorical", "levels": ["none", "graduate"]},
    ],
    "target_name": "loan",
    "positive_label": "approved",
    "threshold": 0.5,
}

JONES_MODEL_SPEC = {
    "kind": "tree",
    "nodes": [
        {"feature": "income", "op": "<", "value": 35000, "left": 1, "right": 2},
        {"leaf": 0.3},
        {"leaf": 0.7},
    ],
}


def jones_csv(rows=120):
    rng = np.random.default_rng(8)
    lines = ["income,age,education"]
    for i in range(rows):
        income = float(np.clip(rng.normal(40000, 15000), 0, 200000))
        age = float(np.clip(rng.normal(45, 12), 18, 100))
        education = "graduate" if i % 2 == 0 else "none"
        lines.append(f"{income},{age},{education}")
    return "\n".join(lines) + "\n"


@pytest.fixture
def client(tmp_path):
    app = create_app(tmp_path / "store")
    with TestClient(app) as c:
        yield c


def register_world(client):
    schema_id = client.post("/schemas", json=JONES_SCHEMA_DOC).json()["id"]
    dataset_id = client.post(
        "/datasets", json={"schema_id": schema_id, "csv": jones_csv()}
    ).json()["id"]
    model_id = client.post(
        "/models", json={"schema_id": schema_id, "spec": JONES_MODEL_SPEC}
    ).json()["id"]
    return schema_id, dataset_id, model_id


def test_healthz(client):
    resp = client.get("/healthz")
    assert resp.status_code == 200
    assert resp.json()["status"] == "ok"


def test_full_flow_and_idempotence(client):
    schema_id, dataset_id, model_id = register_world(client)
    body = {
        "model_id": model_id,
        "dataset_id": dataset_id,
        "observation": {"income": 32000, "age": 45, "education": "graduate"},
        "config": {"seed": 5, "cost_metric": "L1"},
    }
    first = client.post("/explain", json=body)
    assert first.status_code == 200
    doc_id = first.json()["id"]
    doc = first.json()["document"]
    assert doc["prediction"]["probability"] == 0.3
    assert doc["counterfactuals"]

    second = client.post("/explain", json=body)
    assert second.json()["id"] == doc_id  # content-addressed, idempotent

    stored = client.get(f"/explanations/{doc_id}")
    assert stored.status_code == 200
    assert canonical_json(json.loads(stored.text)) == stored.text
    assert json.loads(stored.text)["model_id"] == model_id


def test_unknown_resources_404(client):
    schema_id, dataset_id, model_id = register_world(client)
    resp = client.post(
        "/explain",
        json={"model_id": "nope", "dataset_id": dataset_id, "observation": {}},
    )
    assert resp.status_code == 404
    resp = client.get("/explanations/doesnotexist")
    assert resp.status_code == 404
    resp = client.post("/explanations/doesnotexist/whatif", json={"overrides": {}})
    assert resp.status_code == 404


def test_validation_error_names_field(client):
    schema_id, dataset_id, model_id = register_world(client)
    resp = client.post(
        "/explain",
        json={
            "model_id": model_id,
            "dataset_id": dataset_id,
            "observation": {"income": -5, "age": 45, "education": "graduate"},
        },
    )
    assert resp.status_code == 422
    assert resp.json()["detail"]["field"] == "income"


def explain_jones(client):
    schema_id, dataset_id, model_id = register_world(client)
    resp = client.post(
        "/explain",
        json={
            "model_id": model_id,
            "dataset_id": dataset_id,
            "observation": {"income": 32000, "age": 45, "education": "graduate"},
            "config": {"seed": 5, "cost_metric": "L1"},
        },
    )
    return resp.json()["id"], resp.json()["document"]


def test_whatif_empty_overrides_is_condition_ii_residual(client):
    doc_id, doc = explain_jones(client)
    resp = client.post(f"/explanations/{doc_id}/whatif", json={"overrides": {}})
    assert resp.status_code == 200
    got = resp.json()
    assert got["y_actual"] == doc["prediction"]["probability"]
    assert got["gap"] == doc["certificate"]["residual_at_x"]
    assert got["inside_validity_radius"] is True


def test_whatif_gap_arithmetic(client):
    doc_id, _ = explain_jones(client)
    resp = client.post(
        f"/explanations/{doc_id}/whatif", json={"overrides": {"income": 40000}}
    )
    got = resp.json()
    assert got["y_actual"] == 0.7
    assert got["gap"] == round(abs(got["y_estimate"] - got["y_actual"]), 12)
    assert got["label_actual"] == "approved"


def test_whatif_out_of_range_override(client):
    doc_id, _ = explain_jones(client)
    resp = client.post(
        f"/explanations/{doc_id}/whatif", json={"overrides": {"income": -10}}
    )
    assert resp.status_code == 422
    assert resp.json()["detail"]["field"] == "income"
    resp = client.post(
        f"/explanations/{doc_id}/whatif", json={"overrides": {"wealth": 2}}
    )
    assert resp.status_code == 422


def test_whatif_far_override_leaves_validity(client):
    doc_id, _ = explain_jones(client)
    resp = client.post(
        f"/explanations/{doc_id}/whatif", json={"overrides": {"income": 199999}}
    )
    assert resp.json()["inside_validity_radius"] is False


def test_whatif_is_read_only(client, tmp_path):
    doc_id, _ = explain_jones(client)
    before = client.get(f"/explanations/{doc_id}").text
    client.post(f"/explanations/{doc_id}/whatif", json={"overrides": {"income": 50000}})
    assert client.get(f"/explanations/{doc_id}").text == before


def test_multipart_model_upload(client):
    schema_id = client.post("/schemas", json=JONES_SCHEMA_DOC).json()["id"]
    resp = client.post(
        "/models",
        data={"schema_id": schema_id},
        files={"spec": ("model.json", json.dumps(JONES_MODEL_SPEC), "application/json")},
    )
    assert resp.status_code == 200
    assert resp.json()["kind"] == "tree"


def test_store_round_trip(tmp_path):
    store = Store(tmp_path / "s")
    text = canonical_json({"a": 1.5, "b": [1, 2]})
    doc_id = store.put(text)
    assert store.get(doc_id) == text
    assert store.put(text) == doc_id


# --- remote models -----------------------------------------------------------------

class _RemoteServer:
    """Tiny threaded prediction endpoint backed by a supplied function."""

    def __init__(self, fn):
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length))
                probs = [outer.fn(row) for row in payload["instances"]]
                body = json.dumps({"probabilities": probs}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        self.fn = fn
        self.httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def stop(self):
        self.httpd.shutdown()


def test_remote_model_deterministic_flag(client):
    server = _RemoteServer(lambda row: 0.25 if row[0] < 35000 else 0.75)
    try:
        schema_id = client.post("/schemas", json=JONES_SCHEMA_DOC).json()["id"]
        resp = client.post(
            "/models",
            json={"schema_id": schema_id, "spec": {"kind": "remote", "url": server.url}},
        )
        assert resp.status_code == 200
        assert resp.json()["deterministic"] is True
        assert resp.json()["kind"] == "remote"
    finally:
        server.stop()


def test_remote_model_nondeterminism_flagged_in_report(client):
    calls = {"n": 0}

    def noisy(row):
        calls["n"] += 1
        return 0.2 if calls["n"] % 2 else 0.8

    server = _RemoteServer(noisy)
    try:
        schema_id = client.post("/schemas", json=JONES_SCHEMA_DOC).json()["id"]
        resp = client.post(
            "/models",
            json={"schema_id": schema_id, "spec": {"kind": "remote", "url": server.url}},
        )
        assert resp.json()["deterministic"] is False
    finally:
        server.stop()


def test_remote_model_end_to_end_explain(client):
    server = _RemoteServer(lambda row: 0.3 if row[0] < 35000 else 0.7)
    try:
        schema_id = client.post("/schemas", json=JONES_SCHEMA_DOC).json()["id"]
        dataset_id = client.post(
            "/datasets", json={"schema_id": schema_id, "csv": jones_csv(60)}
        ).json()["id"]
        model_id = client.post(
            "/models",
            json={"schema_id": schema_id, "spec": {"kind": "remote", "url": server.url}},
        ).json()["id"]
        resp = client.post(
            "/explain",
            json={
                "model_id": model_id,
                "dataset_id": dataset_id,
                "observation": {"income": 32000, "age": 45, "education": "graduate"},
                "config": {"seed": 1, "n_samples": 120, "cost_metric": "L1"},
            },
        )
        assert resp.status_code == 200
        doc = resp.json()["document"]
        assert doc["flags"]["model_deterministic"] is True
        assert doc["prediction"]["probability"] == 0.3
    finally:
        server.stop()


# --- CLI ----------------------------------------------------------------------------

@pytest.fixture
def cli_world(tmp_path):
    schema_path = tmp_path / "schema.json"
    schema_path.write_text(json.dumps(JONES_SCHEMA_DOC), encoding="utf-8")
    data_path = tmp_path / "data.csv"
    data_path.write_text(jones_csv(80), encoding="utf-8")
    model_path = tmp_path / "model.json"
    model_path.write_text(json.dumps(JONES_MODEL_SPEC), encoding="utf-8")
    obs_path = tmp_path / "x.json"
    obs_path.write_text(
        json.dumps({"income": 32000, "age": 45, "education": "graduate"}), encoding="utf-8"
    )
    return tmp_path, schema_path, data_path, model_path, obs_path


def test_cli_explain_writes_document(cli_world, capsys):
    tmp_path, schema_path, data_path, model_path, obs_path = cli_world
    out = tmp_path / "doc.json"
    code = main(
        [
            "explain",
            "--schema", str(schema_path),
            "--data", str(data_path),
            "--model", str(model_path),
            "--observation", str(obs_path),
            "--config", '{"seed": 2, "n_samples": 120, "cost_metric": "L1"}',
            "--out", str(out),
            "--level", "analyst",
        ]
    )
    assert code == 0
    rendered = capsys.readouterr().out
    assert "Local equation" in rendered
    doc = json.loads(out.read_text(encoding="utf-8"))
    assert doc["prediction"]["probability"] == 0.3


def test_cli_certify_rechecks(cli_world, capsys):
    tmp_path, schema_path, data_path, model_path, obs_path = cli_world
    out = tmp_path / "doc.json"
    assert main(
        [
            "explain",
            "--schema", str(schema_path),
            "--data", str(data_path),
            "--model", str(model_path),
            "--observation", str(obs_path),
            "--config", '{"seed": 2, "n_samples": 120, "cost_metric": "L1"}',
            "--out", str(out),
        ]
    ) == 0
    capsys.readouterr()
    code = main(["certify", "--explanation", str(out), "--epsilon", "0.5"])
    assert code == 0
    printed = capsys.readouterr().out
    assert "condition_i" in printed and "overall" in printed


def test_cli_validation_error_exit_code(cli_world):
    tmp_path, schema_path, data_path, model_path, _ = cli_world
    code = main(
        [
            "explain",
            "--schema", str(schema_path),
            "--data", str(data_path),
            "--model", str(model_path),
            "--observation", '{"income": -4, "age": 45, "education": "graduate"}',
        ]
    )
    assert code == 2


def test_cli_serve_answers_http(tmp_path):
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    proc = subprocess.Popen(
        [sys.executable, "-m", "whybox.service", "serve", "--port", str(port),
         "--store", str(tmp_path / "store")],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    try:
        base = f"http://127.0.0.1:{port}"
        for _ in range(100):
            try:
                resp = httpx.get(f"{base}/healthz", timeout=1.0)
                if resp.status_code == 200:
                    break
            except httpx.TransportError:
                time.sleep(0.1)
        else:
            pytest.fail("server never became healthy")
        schema_id = httpx.post(f"{base}/schemas", json=JONES_SCHEMA_DOC).json()["id"]
        dataset_id = httpx.post(
            f"{base}/datasets", json={"schema_id": schema_id, "csv": jones_csv(60)}
        ).json()["id"]
        model_id = httpx.post(
            f"{base}/models", json={"schema_id": schema_id, "spec": JONES_MODEL_SPEC}
        ).json()["id"]
        resp = httpx.post(
            f"{base}/explain",
            json={
                "model_id": model_id,
                "dataset_id": dataset_id,
                "observation": {"income": 32000, "age": 45, "education": "graduate"},
                "config": {"seed": 1, "n_samples": 120, "cost_metric": "L1"},
            },
            timeout=30.0,
        )
        assert resp.status_code == 200
        doc_id = resp.json()["id"]
        got = httpx.post(
            f"{base}/explanations/{doc_id}/whatif",
            json={"overrides": {"income": 40000}},
        ).json()
        assert got["y_actual"] == 0.7
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_cli_missing_file_exit_code(cli_world):
    tmp_path, schema_path, data_path, model_path, obs_path = cli_world
    code = main(
        [
            "explain",
            "--schema", str(tmp_path / "missing.json"),
            "--data", str(data_path),
            "--model", str(model_path),
            "--observation", str(obs_path),
        ]
    )
    assert code == 3
    assert main(["certify", "--explanation", str(tmp_path / "nope.json"), "--epsilon", "0.1"]) == 3
