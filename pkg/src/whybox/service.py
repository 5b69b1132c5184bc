"""HTTP and CLI facade: load resources, run explanations, answer what-ifs.

Explanation documents are stored content-addressed (the id is the SHA-256 of
the canonical document bytes) so identical requests are idempotent; what-if
queries are read-only over stored documents plus one fresh model call.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Request
from fastapi.responses import Response

from . import schema as sc
from . import surrogate as sg
from .explain import (
    LEVELS,
    PipelineError,
    canonical_json,
    config_from_dict,
    explain,
    render,
    to_canonical,
)
from .model import (
    BlackBoxModel,
    BudgetExceeded,
    ModelSpecError,
    QueryCounter,
    class_of,
    model_from_dict,
    predict,
)
from .sampling import mad_distance
from .schema import (
    Dataset,
    FeatureSchema,
    Observation,
    SchemaError,
    ValidationError,
    encode_observation,
    load_dataset,
    load_schema,
    observation_from_dict,
    parse_dataset_text,
    schema_from_dict,
)
from .woodward import recheck_certificate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RESOURCE = 3

REMOTE = "remote"
DEFAULT_REMOTE_TIMEOUT = 5.0


class ResourceError(KeyError):
    """An id or path referenced a resource that does not exist."""


class FieldError(ValidationError):
    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


def content_id(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class Store:
    """Content-addressed explanation documents on disk, written atomically."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, doc_id: str) -> Path:
        return self.root / f"{doc_id}.json"

    def put(self, text: str) -> str:
        doc_id = content_id(text)
        target = self.path(doc_id)
        if not target.exists():
            fd, tmp = tempfile.mkstemp(dir=self.root, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(text)
                os.replace(tmp, target)
            finally:
                if os.path.exists(tmp):
                    os.unlink(tmp)
        return doc_id

    def get(self, doc_id: str) -> str:
        target = self.path(doc_id)
        if not target.exists():
            raise ResourceError(f"unknown explanation {doc_id!r}")
        return target.read_text(encoding="utf-8")


class Registry:
    """In-memory schemas, datasets and models keyed by content id."""

    def __init__(self):
        self.schemas: dict[str, FeatureSchema] = {}
        self.datasets: dict[str, Dataset] = {}
        self.models: dict[str, BlackBoxModel] = {}

    def add_schema(self, doc: dict) -> str:
        schema = schema_from_dict(doc)
        rid = content_id(canonical_json(sc.schema_to_dict(schema)))
        self.schemas[rid] = schema
        return rid

    def add_dataset(self, schema_id: str, csv_text: str) -> str:
        schema = self.schema(schema_id)
        dataset = parse_dataset_text(csv_text, schema, source="<upload>")
        rid = content_id(canonical_json({"schema": schema_id, "csv": csv_text}))
        self.datasets[rid] = dataset
        return rid

    def add_model(self, schema_id: str, spec: dict) -> str:
        schema = self.schema(schema_id)
        model = build_model(spec, schema)
        rid = content_id(canonical_json({"schema": schema_id, "spec": spec}))
        self.models[rid] = model
        return rid

    def schema(self, rid: str) -> FeatureSchema:
        if rid not in self.schemas:
            raise ResourceError(f"unknown schema {rid!r}")
        return self.schemas[rid]

    def dataset(self, rid: str) -> Dataset:
        if rid not in self.datasets:
            raise ResourceError(f"unknown dataset {rid!r}")
        return self.datasets[rid]

    def model(self, rid: str) -> BlackBoxModel:
        if rid not in self.models:
            raise ResourceError(f"unknown model {rid!r}")
        return self.models[rid]


def _probe_encoded(schema: FeatureSchema) -> np.ndarray:
    """A valid encoded point (range midpoints, first levels) for remote probing."""
    e = np.zeros(schema.encoded_dim, dtype=np.float64)
    pos = 0
    for f in schema.features:
        if f.kind == sc.CATEGORICAL:
            e[pos] = 1.0
            pos += len(f.levels)
        else:
            mid = (f.low + f.high) / 2.0
            e[pos] = round(mid) - f.low if f.kind == sc.ORDINAL else mid
            pos += 1
    return e


def remote_model(spec: dict, schema: FeatureSchema) -> BlackBoxModel:
    """Wrap a callback endpoint as a model; probes twice to detect nondeterminism."""
    import httpx

    url = spec.get("url")
    if not url:
        raise ModelSpecError("remote model spec needs a url")
    timeout = float(spec.get("timeout", DEFAULT_REMOTE_TIMEOUT))
    counter = QueryCounter(spec.get("max_queries"))
    endpoint = url.rstrip("/") + "/predict"

    def proba(E: np.ndarray) -> np.ndarray:
        counter.spend(E.shape[0])
        resp = httpx.post(endpoint, json={"instances": E.tolist()}, timeout=timeout)
        resp.raise_for_status()
        probs = np.asarray(resp.json().get("probabilities", ()), dtype=np.float64)
        if probs.shape != (E.shape[0],):
            raise ModelSpecError(
                f"remote model returned {probs.size} probabilities for {E.shape[0]} rows"
            )
        if probs.size and (probs.min() < 0.0 or probs.max() > 1.0):
            raise ModelSpecError("remote model returned probabilities outside [0, 1]")
        return probs

    probe = _probe_encoded(schema).reshape(1, -1)
    twice = np.vstack([probe, probe])
    out = proba(twice)
    deterministic = bool(out[0] == out[1])

    ident = "sha256:" + hashlib.sha256(
        canonical_json({"kind": REMOTE, "url": url}).encode("utf-8")
    ).hexdigest()[:16]
    return BlackBoxModel(ident, REMOTE, schema, proba, deterministic=deterministic)


def build_model(spec: dict, schema: FeatureSchema) -> BlackBoxModel:
    if spec.get("kind") == REMOTE:
        return remote_model(spec, schema)
    return model_from_dict(spec, schema)


def observation_from_request(schema: FeatureSchema, mapping: dict) -> Observation:
    """Like observation_from_dict but errors carry the offending field name."""
    for name in schema.names:
        if name not in mapping:
            raise FieldError(name, f"missing value for feature {name!r}")
    for name in mapping:
        if name not in schema.names:
            raise FieldError(name, f"unknown feature {name!r}")
    values = []
    for name in schema.names:
        try:
            values.append(schema.feature(name).coerce(mapping[name]))
        except ValidationError as exc:
            raise FieldError(name, str(exc)) from exc
    return Observation(tuple(values))


def answer_whatif(doc: dict, overrides: dict, model: BlackBoxModel) -> dict:
    """Merge overrides onto the stored observation; estimate vs fresh actual."""
    schema = schema_from_dict(doc["schema"])
    equation = sg.equation_from_dict(doc["equation"], schema)
    merged = observation_from_dict(schema, doc["observation"])
    for name, value in overrides.items():
        if name not in schema.names:
            raise FieldError(name, f"unknown feature {name!r}")
        try:
            merged = merged.replace(schema, name, value)
        except ValidationError as exc:
            raise FieldError(name, str(exc)) from exc

    y_estimate = sg.evaluate(equation, merged)
    y_actual = predict(model, merged).probability
    scales = np.asarray(doc["distance_scales"], dtype=np.float64)
    distance = mad_distance(
        encode_observation(schema, merged),
        encode_observation(schema, equation.center),
        scales,
    )
    return {
        "observation": merged.to_dict(schema),
        "y_estimate": float(y_estimate),
        "y_actual": float(y_actual),
        "gap": round(abs(float(y_estimate) - float(y_actual)), 12),
        "label_estimate": class_of(y_estimate, schema.threshold, schema.positive_label),
        "label_actual": class_of(y_actual, schema.threshold, schema.positive_label),
        "inside_validity_radius": bool(distance <= equation.validity_radius),
    }


def run_explanation(registry: Registry, store: Store, model_id: str, dataset_id: str,
                    observation: dict, config_overrides: dict | None) -> tuple[str, dict]:
    model = registry.model(model_id)
    dataset = registry.dataset(dataset_id)
    x = observation_from_request(model.schema, observation)
    cfg = config_from_dict(config_overrides or {})
    report = explain(model, dataset, x, cfg)
    doc = json.loads(to_canonical(report))
    doc["model_id"] = model_id  # registry id, so what-if can find the model again
    text = canonical_json(doc)
    return store.put(text), doc


def create_app(store_dir):
    """FastAPI application over one document store and an in-memory registry."""
    app = FastAPI(title="whybox", version="0.1.0")
    registry = Registry()
    store = Store(store_dir)
    app.state.registry = registry
    app.state.store = store

    def _fail(exc: Exception):
        if isinstance(exc, ResourceError):
            raise HTTPException(status_code=404, detail={"error": str(exc).strip("'\"")})
        if isinstance(exc, FieldError):
            raise HTTPException(status_code=422, detail={"error": str(exc), "field": exc.field})
        if isinstance(exc, PipelineError) and isinstance(
            exc.cause, (ValidationError, SchemaError, BudgetExceeded)
        ):
            raise HTTPException(status_code=422, detail={"error": str(exc)})
        if isinstance(exc, (ValidationError, SchemaError, ModelSpecError, BudgetExceeded, ValueError)):
            raise HTTPException(status_code=422, detail={"error": str(exc)})
        raise exc

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "version": "0.1.0"}

    @app.post("/schemas")
    def post_schema(payload: dict = Body(...)):
        try:
            return {"id": registry.add_schema(payload)}
        except Exception as exc:
            _fail(exc)

    @app.post("/datasets")
    def post_dataset(payload: dict = Body(...)):
        try:
            rid = registry.add_dataset(payload.get("schema_id", ""), payload.get("csv", ""))
            return {"id": rid, "rows": len(registry.datasets[rid])}
        except Exception as exc:
            _fail(exc)

    @app.post("/models")
    async def post_model(request: Request):
        try:
            content_type = request.headers.get("content-type", "")
            if content_type.startswith("multipart/"):
                form = await request.form()
                schema_id = str(form.get("schema_id", ""))
                upload = form.get("spec")
                if upload is None:
                    raise ValidationError("multipart upload needs a 'spec' file part")
                spec = json.loads(await upload.read())
            else:
                payload = await request.json()
                schema_id = payload.get("schema_id", "")
                spec = payload.get("spec", {})
            rid = registry.add_model(schema_id, spec)
            model = registry.models[rid]
            return {"id": rid, "kind": model.kind, "deterministic": model.deterministic}
        except Exception as exc:
            _fail(exc)

    @app.post("/explain")
    def post_explain(payload: dict = Body(...)):
        try:
            doc_id, doc = run_explanation(
                registry,
                store,
                payload.get("model_id", ""),
                payload.get("dataset_id", ""),
                payload.get("observation", {}),
                payload.get("config"),
            )
            return {"id": doc_id, "document": doc}
        except Exception as exc:
            _fail(exc)

    @app.get("/explanations/{doc_id}")
    def get_explanation(doc_id: str):
        try:
            return Response(content=store.get(doc_id), media_type="application/json")
        except Exception as exc:
            _fail(exc)

    @app.post("/explanations/{doc_id}/whatif")
    def post_whatif(doc_id: str, payload: dict = Body(...)):
        try:
            doc = json.loads(store.get(doc_id))
            model = registry.model(doc["model_id"])
            return answer_whatif(doc, payload.get("overrides", {}), model)
        except Exception as exc:
            _fail(exc)

    return app


# --- command line -----------------------------------------------------------

def _read_json(path_or_literal: str):
    p = Path(path_or_literal)
    if p.exists():
        return json.loads(p.read_text(encoding="utf-8"))
    try:
        return json.loads(path_or_literal)
    except json.JSONDecodeError:
        raise ResourceError(f"no such file and not inline JSON: {path_or_literal!r}") from None


def _cmd_explain(args) -> int:
    schema = load_schema(args.schema)
    dataset = load_dataset(args.data, schema)
    from .model import load_model

    model = load_model(args.model, schema)
    x = observation_from_dict(schema, _read_json(args.observation))
    overrides = _read_json(args.config) if args.config else {}
    cfg = config_from_dict(overrides)
    report = explain(model, dataset, x, cfg)
    text = to_canonical(report)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    if args.level:
        sys.stdout.write(render(report, args.level))
    elif not args.out:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def _cmd_certify(args) -> int:
    path = Path(args.explanation)
    if not path.exists():
        raise ResourceError(f"no such explanation document: {args.explanation}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if "certificate" not in doc:
        raise ValidationError("document carries no certificate")
    result = recheck_certificate(doc["certificate"], args.epsilon)
    for key in ("condition_i", "condition_ii", "condition_iii"):
        sys.stdout.write(f"{key}: {'pass' if result[key] else 'FAIL'}\n")
    sys.stdout.write(
        f"overall: {'pass' if result['passed'] else 'FAIL'} (epsilon={args.epsilon:g}, "
        f"max fidelity error={result['max_fidelity_error']:g})\n"
    )
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run(create_app(args.store), host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="whybox", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="explain one observation")
    p.add_argument("--schema", required=True, help="schema JSON file")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--model", required=True, help="model spec JSON file")
    p.add_argument("--observation", required=True, help="observation JSON file or inline JSON")
    p.add_argument("--config", help="engine config overrides, JSON file or inline JSON")
    p.add_argument("--out", help="write the canonical explanation document here")
    p.add_argument("--level", choices=LEVELS, help="also print a rendered report")
    p.set_defaults(func=_cmd_explain)

    p = sub.add_parser("certify", help="re-threshold a stored certificate")
    p.add_argument("--explanation", required=True, help="stored explanation document")
    p.add_argument("--epsilon", required=True, type=float)
    p.set_defaults(func=_cmd_certify)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--store", required=True, help="explanation store directory")
    p.set_defaults(func=_cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ResourceError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RESOURCE
    except PipelineError as exc:
        sys.stderr.write(f"error: {exc}\n")
        cause = exc.cause
        return EXIT_RESOURCE if isinstance(cause, (ResourceError, FileNotFoundError)) else EXIT_VALIDATION
    except (ValidationError, SchemaError, ModelSpecError, BudgetExceeded, ValueError,
            json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
