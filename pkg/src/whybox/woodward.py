"""Machine-checkable certification that an equation causally explains a prediction.

The certificate records three conditions: (i) the equation is approximately
true around the observation (max fidelity error over the observation, the
counterfactuals and fresh out-of-sample probes within epsilon); (ii) the
equation reproduces the explained prediction itself within epsilon; and
(iii) at least one intervention changes the model's output with the equation
correctly tracking the new value. Interventions are exogenous value-settings
of input features with all other features held fixed; they may touch
immutable features, because immutability constrains recourse, not
hypothetical probing of the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import schema as sc
from .counterfactual import CounterfactualInstance
from .model import BlackBoxModel, predict
from .sampling import PerturbationDistributions, certification_probes
from .schema import FeatureSchema, Observation
from .surrogate import CausalEquation, evaluate

DEFAULT_EPSILON = 0.05
DEFAULT_EPSILON_CHANGE = 1e-4
FRESH_PROBES = 32
INVARIANCE_PROBES = 8
DIRECT_CAUSE_PROBES = 64

# reported gaps are stabilized to 12 decimals so decimal fixtures stay exact
_GAP_DECIMALS = 12


@dataclass(frozen=True)
class TestingInterventionResult:
    """One intervention probe: set feature(s) to new value(s), hold the rest.

    Joint interventions (vector-valued X) join feature names with ``+`` and
    carry tuples in ``from_value``/``to_value``. A probe is a *testing*
    intervention only when the equation itself describes a change
    (``eq_changed``): the generalisation must map the old and new inputs to
    different values, not merely sit near the model.
    """

    feature: str
    from_value: object
    to_value: object
    y_model_before: float
    y_model_after: float
    y_eq_before: float
    y_eq_after: float
    model_changed: bool
    eq_changed: bool
    eq_tracks: bool
    epsilon: float
    epsilon_change: float

    def tracks_at(self, epsilon: float) -> bool:
        return abs(self.y_eq_after - self.y_model_after) <= epsilon

    def supports(self, epsilon: float) -> bool:
        return self.model_changed and self.eq_changed and self.tracks_at(epsilon)


def fidelity_error(eq: CausalEquation, m: BlackBoxModel, x_cf: Observation) -> float:
    """|equation estimate - actual model output| at a probe point.

    The gap is rounded to 12 decimals so that decimal-valued fixtures
    (e.g. estimate 0.61 vs actual 0.57) yield their exact decimal gap.
    """
    gap = abs(evaluate(eq, x_cf) - predict(m, x_cf).probability)
    return round(gap, _GAP_DECIMALS)


def _intervene(eq: CausalEquation, m: BlackBoxModel, x: Observation,
               features: list[str], to_values: list, epsilon: float,
               epsilon_change: float) -> TestingInterventionResult:
    s = m.schema
    x_after = x
    for name, value in zip(features, to_values):
        x_after = x_after.replace(s, name, value)
    y_model_before = predict(m, x).probability
    y_model_after = predict(m, x_after).probability
    y_eq_before = evaluate(eq, x)
    y_eq_after = evaluate(eq, x_after)
    froms = tuple(x.value(s, n) for n in features)
    tos = tuple(x_after.value(s, n) for n in features)
    return TestingInterventionResult(
        feature="+".join(features),
        from_value=froms[0] if len(features) == 1 else froms,
        to_value=tos[0] if len(features) == 1 else tos,
        y_model_before=y_model_before,
        y_model_after=y_model_after,
        y_eq_before=y_eq_before,
        y_eq_after=y_eq_after,
        model_changed=abs(y_model_after - y_model_before) > epsilon_change,
        eq_changed=abs(y_eq_after - y_eq_before) > epsilon_change,
        eq_tracks=abs(y_eq_after - y_model_after) <= epsilon,
        epsilon=epsilon,
        epsilon_change=epsilon_change,
    )


def testing_intervention(eq: CausalEquation, m: BlackBoxModel, x: Observation,
                         feature: str, to_value,
                         epsilon: float = DEFAULT_EPSILON,
                         epsilon_change: float = DEFAULT_EPSILON_CHANGE) -> TestingInterventionResult:
    """Set one feature to ``to_value`` with everything else held fixed and
    record how the model moves and whether the equation tracks it."""
    decl = m.schema.feature(feature)
    if not decl.contains(to_value):
        raise sc.ValidationError(f"value {to_value!r} out of range for feature {feature!r}")
    return _intervene(eq, m, x, [feature], [decl.coerce(to_value)], epsilon, epsilon_change)


def _probe_values(decl, count: int) -> list:
    if decl.kind == sc.CATEGORICAL:
        return list(decl.levels)
    if decl.kind == sc.ORDINAL:
        vals = np.unique(np.round(np.linspace(decl.low, decl.high, count)).astype(int))
        return [int(v) for v in vals]
    return [float(v) for v in np.linspace(decl.low, decl.high, count)]


def _invariance_records(eq: CausalEquation, m: BlackBoxModel, x: Observation,
                        features, probes_per_feature: int, epsilon: float,
                        epsilon_change: float):
    flags: dict[str, bool] = {}
    supporting: list[TestingInterventionResult] = []
    for name in features:
        decl = m.schema.feature(name)
        found = False
        for v in _probe_values(decl, probes_per_feature):
            if v == x.value(m.schema, name):
                continue
            r = _intervene(eq, m, x, [name], [decl.coerce(v)], epsilon, epsilon_change)
            if r.model_changed:
                supporting.append(r)
            if r.supports(epsilon):
                found = True
                break
        flags[name] = found
    return flags, supporting


def invariance_check(eq: CausalEquation, m: BlackBoxModel, x: Observation,
                     features, probes_per_feature: int = INVARIANCE_PROBES,
                     epsilon: float = DEFAULT_EPSILON,
                     epsilon_change: float = DEFAULT_EPSILON_CHANGE) -> dict[str, bool]:
    """Per-feature invariance: does at least one testing intervention exist
    (evenly spaced values / all levels) under which both the model's output
    and the equation's described value change, with the equation tracking the
    model's new value? The quantifier is existential."""
    if probes_per_feature < 1:
        raise ValueError("probes_per_feature must be >= 1")
    flags, _ = _invariance_records(eq, m, x, features, probes_per_feature, epsilon, epsilon_change)
    return flags


def direct_causes(m: BlackBoxModel, x: Observation, s: FeatureSchema,
                  probes: int = DIRECT_CAUSE_PROBES,
                  epsilon_change: float = DEFAULT_EPSILON_CHANGE) -> tuple[str, ...]:
    """Features whose value changes move the prediction while all other
    features are held fixed at x's values; schema order."""
    if probes < 2:
        raise ValueError("probes must be >= 2")
    y0 = predict(m, x).probability
    causes = []
    for decl in s.features:
        moved = False
        for v in _probe_values(decl, probes):
            if v == x.value(s, decl.name):
                continue
            y = predict(m, x.replace(s, decl.name, v)).probability
            if abs(y - y0) > epsilon_change:
                moved = True
                break
        if moved:
            causes.append(decl.name)
    return tuple(causes)


@dataclass(frozen=True)
class WoodwardCertificate:
    """Record of the three causal-explanation conditions at tolerance epsilon."""

    condition_i: bool
    condition_ii: bool
    condition_iii: bool
    max_fidelity_error: float
    residual_at_x: float
    fidelity_errors: tuple[float, ...]
    witness: TestingInterventionResult | None
    witness_candidates: tuple[TestingInterventionResult, ...]
    invariant_features: tuple[str, ...]
    direct_causes: tuple[str, ...]
    epsilon: float
    epsilon_change: float

    @property
    def passed(self) -> bool:
        return self.condition_i and self.condition_ii and self.condition_iii


def certify(eq: CausalEquation, m: BlackBoxModel, x: Observation,
            cfs: list[CounterfactualInstance], epsilon: float = DEFAULT_EPSILON, *,
            dists: PerturbationDistributions, seed: int = 0,
            epsilon_change: float = DEFAULT_EPSILON_CHANGE,
            fresh_probes: int = FRESH_PROBES,
            invariance_probes: int = INVARIANCE_PROBES,
            cause_probes: int = DIRECT_CAUSE_PROBES) -> WoodwardCertificate:
    """Assemble the certificate for (equation, counterfactuals, model, x).

    Condition (i) is checked out-of-sample: besides x and the counterfactual
    instances, ``fresh_probes`` new points are drawn around x on a stream
    independent of the fitting neighbourhood. Condition (iii) witnesses come
    from the counterfactual instances (joint interventions); when there are
    none, invariance probing over all mutable features stands in.
    """
    s = m.schema
    s.validate(x)
    errors = [fidelity_error(eq, m, x)]
    errors.extend(fidelity_error(eq, m, cf.x_cf) for cf in cfs)
    for probe in certification_probes(x, dists, fresh_probes, seed):
        errors.append(fidelity_error(eq, m, probe))

    residual_at_x = errors[0]
    max_error = max(errors)
    condition_i = max_error <= epsilon
    condition_ii = residual_at_x <= epsilon

    candidates: list[TestingInterventionResult] = []
    for cf in cfs:
        names = [c.feature for c in cf.delta]
        values = [c.after for c in cf.delta]
        candidates.append(_intervene(eq, m, x, names, values, epsilon, epsilon_change))

    flags, supporting = _invariance_records(
        eq, m, x, s.mutable_features(), invariance_probes, epsilon, epsilon_change
    )
    if not cfs:
        candidates.extend(supporting)

    witness = next((c for c in candidates if c.supports(epsilon)), None)

    return WoodwardCertificate(
        condition_i=condition_i,
        condition_ii=condition_ii,
        condition_iii=witness is not None,
        max_fidelity_error=max_error,
        residual_at_x=residual_at_x,
        fidelity_errors=tuple(errors),
        witness=witness,
        witness_candidates=tuple(candidates),
        invariant_features=tuple(n for n in s.names if flags.get(n, False)),
        direct_causes=direct_causes(m, x, s, cause_probes, epsilon_change),
        epsilon=epsilon,
        epsilon_change=epsilon_change,
    )


def tir_to_dict(r: TestingInterventionResult) -> dict:
    def plain(v):
        return list(v) if isinstance(v, tuple) else v

    return {
        "feature": r.feature,
        "from_value": plain(r.from_value),
        "to_value": plain(r.to_value),
        "y_model_before": r.y_model_before,
        "y_model_after": r.y_model_after,
        "y_eq_before": r.y_eq_before,
        "y_eq_after": r.y_eq_after,
        "model_changed": r.model_changed,
        "eq_changed": r.eq_changed,
        "eq_tracks": r.eq_tracks,
        "epsilon": r.epsilon,
        "epsilon_change": r.epsilon_change,
    }


def certificate_to_dict(c: WoodwardCertificate) -> dict:
    return {
        "condition_i": c.condition_i,
        "condition_ii": c.condition_ii,
        "condition_iii": c.condition_iii,
        "passed": c.passed,
        "max_fidelity_error": c.max_fidelity_error,
        "residual_at_x": c.residual_at_x,
        "fidelity_errors": list(c.fidelity_errors),
        "witness": tir_to_dict(c.witness) if c.witness else None,
        "witness_candidates": [tir_to_dict(w) for w in c.witness_candidates],
        "invariant_features": list(c.invariant_features),
        "direct_causes": list(c.direct_causes),
        "epsilon": c.epsilon,
        "epsilon_change": c.epsilon_change,
    }


def recheck_certificate(cert_doc: dict, epsilon: float) -> dict:
    """Re-threshold a stored certificate at a new epsilon without the model.

    Possible because the certificate stores every probed fidelity error and
    every intervention candidate with its raw before/after values.
    """
    errors = cert_doc["fidelity_errors"]
    residual = cert_doc["residual_at_x"]
    cond_i = max(errors) <= epsilon
    cond_ii = residual <= epsilon
    cond_iii = any(
        w["model_changed"]
        and w["eq_changed"]
        and abs(w["y_eq_after"] - w["y_model_after"]) <= epsilon
        for w in cert_doc["witness_candidates"]
    )
    return {
        "condition_i": cond_i,
        "condition_ii": cond_ii,
        "condition_iii": cond_iii,
        "passed": cond_i and cond_ii and cond_iii,
        "epsilon": epsilon,
        "max_fidelity_error": max(errors),
        "residual_at_x": residual,
    }
