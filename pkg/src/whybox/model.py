"""Black-box model abstraction and the deterministic built-in model zoo."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .schema import FeatureSchema, Observation, ValidationError, encode_observation

LOGISTIC = "logistic"
MLP = "mlp"
TREE = "tree"

_RELU = "relu"
_SIGMOID = "sigmoid"


class ModelSpecError(ValueError):
    """Raised when a model spec does not parse or fit the schema."""


class BudgetExceeded(RuntimeError):
    """Raised when a query counter is asked to spend past its budget."""


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class Prediction:
    probability: float
    label: str


@dataclass(frozen=True)
class BlackBoxModel:
    """A pure, deterministic mapping from encoded observations to probabilities.

    ``proba`` accepts a (n, encoded_dim) matrix and returns n probabilities;
    everything downstream treats the model as query access only.
    """

    identifier: str
    kind: str
    schema: FeatureSchema
    proba: Callable[[np.ndarray], np.ndarray]
    deterministic: bool = True

    def proba_one(self, encoded: np.ndarray) -> float:
        return float(self.proba(encoded.reshape(1, -1))[0])


def class_of(p: float, threshold: float, positive_label: str = "positive",
             negative_label: str | None = None) -> str:
    """Label for probability ``p``: positive iff p >= threshold."""
    if not (0.0 <= p <= 1.0):
        raise ValidationError(f"probability {p} outside [0, 1]")
    if not (0.0 < threshold < 1.0):
        raise ValidationError(f"threshold {threshold} outside (0, 1)")
    if negative_label is None:
        negative_label = "not_" + positive_label
    return positive_label if p >= threshold else negative_label


def predict(m: BlackBoxModel, x: Observation) -> Prediction:
    """Evaluate the model at ``x`` and attach the thresholded label."""
    p = m.proba_one(encode_observation(m.schema, x))
    label = class_of(p, m.schema.threshold, m.schema.positive_label)
    return Prediction(probability=p, label=label)


def _logistic_evaluator(weights: np.ndarray, bias: float):
    def proba(E: np.ndarray) -> np.ndarray:
        return sigmoid(E @ weights + bias)

    return proba


def _mlp_evaluator(layers):
    def proba(E: np.ndarray) -> np.ndarray:
        h = E
        for W, b, act in layers:
            h = h @ W + b
            h = np.maximum(h, 0.0) if act == _RELU else sigmoid(h)
        return h[:, 0]

    return proba


def _tree_evaluator(nodes):
    def proba(E: np.ndarray) -> np.ndarray:
        out = np.empty(E.shape[0], dtype=np.float64)

        def walk(idx, mask):
            node = nodes[idx]
            if "leaf" in node:
                out[mask] = node["leaf"]
                return
            go_left = E[mask, node["feature"]] < node["value"]
            rows = np.flatnonzero(mask)
            left_mask = np.zeros_like(mask)
            left_mask[rows[go_left]] = True
            right_mask = np.zeros_like(mask)
            right_mask[rows[~go_left]] = True
            if left_mask.any():
                walk(node["left"], left_mask)
            if right_mask.any():
                walk(node["right"], right_mask)

        walk(0, np.ones(E.shape[0], dtype=bool))
        return out

    return proba


def _resolve_tree_feature(ref, schema: FeatureSchema) -> int:
    """Tree split features are encoded-vector indices; numeric/ordinal
    features may be referenced by name."""
    if isinstance(ref, bool):
        raise ModelSpecError(f"invalid tree feature reference {ref!r}")
    if isinstance(ref, int):
        if not (0 <= ref < schema.encoded_dim):
            raise ModelSpecError(f"tree feature index {ref} outside encoded dimension {schema.encoded_dim}")
        return ref
    if isinstance(ref, str):
        decl = schema.feature(ref)
        if decl.kind == "categorical":
            raise ModelSpecError(
                f"categorical feature {ref!r} cannot be a tree split; reference an indicator index"
            )
        return schema.encoded_offsets()[schema.index(ref)]
    raise ModelSpecError(f"invalid tree feature reference {ref!r}")


def model_from_dict(spec: Mapping, schema: FeatureSchema) -> BlackBoxModel:
    """Build a zoo model from its spec document, checking shapes and ranges."""
    kind = spec.get("kind")
    dim = schema.encoded_dim
    ident = "sha256:" + hashlib.sha256(
        json.dumps(spec, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()[:16]

    if kind == LOGISTIC:
        weights = np.asarray(spec.get("weights", ()), dtype=np.float64)
        bias = float(spec.get("bias", 0.0))
        if weights.shape != (dim,):
            raise ModelSpecError(f"logistic spec has {weights.size} weights, encoding dimension is {dim}")
        return BlackBoxModel(ident, LOGISTIC, schema, _logistic_evaluator(weights, bias))

    if kind == MLP:
        raw_layers = spec.get("layers")
        if not raw_layers:
            raise ModelSpecError("mlp spec needs a non-empty layer list")
        layers, in_dim = [], dim
        for i, layer in enumerate(raw_layers):
            W = np.asarray(layer.get("weights", ()), dtype=np.float64)
            b = np.asarray(layer.get("bias", ()), dtype=np.float64)
            act = layer.get("activation")
            if act not in (_RELU, _SIGMOID):
                raise ModelSpecError(f"mlp layer {i}: unknown activation {act!r}")
            if W.ndim != 2 or W.shape[0] != in_dim:
                raise ModelSpecError(f"mlp layer {i}: weight shape {W.shape} does not chain from {in_dim}")
            if b.shape != (W.shape[1],):
                raise ModelSpecError(f"mlp layer {i}: bias shape {b.shape} does not match width {W.shape[1]}")
            layers.append((W, b, act))
            in_dim = W.shape[1]
        if in_dim != 1 or layers[-1][2] != _SIGMOID:
            raise ModelSpecError("mlp final layer must have width 1 and sigmoid activation")
        return BlackBoxModel(ident, MLP, schema, _mlp_evaluator(layers))

    if kind == TREE:
        raw_nodes = spec.get("nodes")
        if not raw_nodes:
            raise ModelSpecError("tree spec needs a non-empty node list")
        nodes = []
        for i, node in enumerate(raw_nodes):
            if "leaf" in node:
                p = float(node["leaf"])
                if not (0.0 <= p <= 1.0):
                    raise ModelSpecError(f"tree node {i}: leaf probability {p} outside [0, 1]")
                nodes.append({"leaf": p})
                continue
            if node.get("op", "<") != "<":
                raise ModelSpecError(f"tree node {i}: unsupported op {node.get('op')!r}")
            left, right = node.get("left"), node.get("right")
            if not all(isinstance(j, int) and i < j < len(raw_nodes) for j in (left, right)):
                raise ModelSpecError(f"tree node {i}: children must be later node indices")
            nodes.append(
                {
                    "feature": _resolve_tree_feature(node.get("feature"), schema),
                    "value": float(node.get("value")),
                    "left": left,
                    "right": right,
                }
            )
        return BlackBoxModel(ident, TREE, schema, _tree_evaluator(nodes))

    raise ModelSpecError(f"unknown model kind {kind!r}")


def load_model(path, schema: FeatureSchema) -> BlackBoxModel:
    """Read a JSON model spec (field inventory per FORMATS.md)."""
    with Path(path).open("r", encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelSpecError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(spec, schema)


class QueryCounter:
    """Counts model evaluations against an optional hard budget."""

    def __init__(self, budget: int | None = None):
        self.budget = budget
        self.count = 0

    @property
    def remaining(self) -> int:
        return (1 << 62) if self.budget is None else max(self.budget - self.count, 0)

    def spend(self, n: int) -> None:
        if self.budget is not None and self.count + n > self.budget:
            raise BudgetExceeded(f"query budget {self.budget} exhausted")
        self.count += n


def counted_proba(m: BlackBoxModel, counter: QueryCounter | None):
    """Wrap ``m.proba`` so every evaluated row is charged to ``counter``."""
    if counter is None:
        return m.proba

    def proba(E: np.ndarray) -> np.ndarray:
        counter.spend(E.shape[0])
        return m.proba(E)

    return proba
