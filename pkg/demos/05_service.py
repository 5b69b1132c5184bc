"""The HTTP service: register resources, explain, then ask what-if questions.

Runs the FastAPI app in-process (no network needed). The same flow works
against `whybox serve --port 8000 --store DIR` with any HTTP client, and is
what the browser explorer in frontend/ consumes.
"""

import json
import tempfile

import numpy as np
from fastapi.testclient import TestClient

from whybox.service import create_app

schema_doc = {
    "features": [
        {"name": "income", "kind": "numeric", "range": [0, 200000]},
        {"name": "age", "kind": "numeric", "range": [18, 100], "immutable": True},
        {"name": "education", "kind": "categorical", "levels": ["none", "graduate"]},
    ],
    "target_name": "loan",
    "positive_label": "approved",
    "threshold": 0.5,
}
model_spec = {
    "kind": "tree",
    "nodes": [
        {"feature": "income", "op": "<", "value": 35000, "left": 1, "right": 2},
        {"leaf": 0.3},
        {"leaf": 0.7},
    ],
}

rng = np.random.default_rng(0)
csv_lines = ["income,age,education"]
for i in range(200):
    csv_lines.append(
        f"{float(np.clip(rng.normal(40000, 15000), 0, 200000))},"
        f"{float(np.clip(rng.normal(45, 12), 18, 100))},"
        f"{'graduate' if i % 2 == 0 else 'none'}"
    )
csv_text = "\n".join(csv_lines) + "\n"

app = create_app(tempfile.mkdtemp(prefix="whybox-store-"))
with TestClient(app) as client:
    schema_id = client.post("/schemas", json=schema_doc).json()["id"]
    dataset_id = client.post("/datasets", json={"schema_id": schema_id, "csv": csv_text}).json()["id"]
    model_id = client.post("/models", json={"schema_id": schema_id, "spec": model_spec}).json()["id"]
    print(f"registered schema={schema_id[:12]} dataset={dataset_id[:12]} model={model_id[:12]}")

    resp = client.post(
        "/explain",
        json={
            "model_id": model_id,
            "dataset_id": dataset_id,
            "observation": {"income": 32000, "age": 45, "education": "graduate"},
            "config": {"seed": 0, "cost_metric": "L1"},
        },
    ).json()
    doc_id, doc = resp["id"], resp["document"]
    print(f"\nexplanation {doc_id[:16]}...")
    print(f"prediction: {doc['prediction']}")
    print(f"counterfactuals: {len(doc['counterfactuals'])}, "
          f"cheapest delta: {doc['counterfactuals'][0]['delta']}")
    print(f"certificate passed: {doc['certificate']['passed']}")

    # identical request -> identical id (content-addressed storage)
    again = client.post(
        "/explain",
        json={
            "model_id": model_id,
            "dataset_id": dataset_id,
            "observation": {"income": 32000, "age": 45, "education": "graduate"},
            "config": {"seed": 0, "cost_metric": "L1"},
        },
    ).json()["id"]
    print(f"idempotent: {again == doc_id}")

    # what-if: estimate from the stored equation, actual from a fresh model call
    for overrides in ({}, {"income": 36000}, {"income": 12000}, {"income": 199999}):
        got = client.post(f"/explanations/{doc_id}/whatif", json={"overrides": overrides}).json()
        print(
            f"\nwhat-if {overrides or '{}'}:"
            f"\n  estimate {got['y_estimate']:.4f} ({got['label_estimate']})"
            f"  actual {got['y_actual']:.4f} ({got['label_actual']})"
            f"  gap {got['gap']:.4f}"
            f"  inside validity: {got['inside_validity_radius']}"
        )
