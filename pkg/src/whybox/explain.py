"""End-to-end pipeline: sample, search counterfactuals, fit, certify, report."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from . import counterfactual as cf
from . import sampling
from . import schema as sc
from . import surrogate as sg
from . import woodward as wd
from .model import BlackBoxModel, Prediction, QueryCounter, counted_proba, predict
from .schema import Dataset, FeatureSchema, Observation

ENGINE_VERSION = "0.1.0"

LEVELS = ("customer", "analyst", "scientist")

NO_COUNTERFACTUALS_TEXT = "none found within constraints"


class PipelineError(RuntimeError):
    """A module error tagged with the pipeline stage it came from."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class EngineConfig:
    """All pipeline knobs; defaults follow the per-module choices."""

    n_samples: int = 1000
    seed: int = 0
    kernel_width: float = 1.0
    cost_metric: str = cf.L1_MAD
    sparsity_cap: int = 2
    plausibility_floor: float = 0.99
    quadratics: bool = False
    interactions: bool = False
    link: str = sg.LOGIT
    ridge: float = 1e-6
    max_terms: int = 0  # 0 keeps the full term list (no stepwise selection)
    epsilon: float = wd.DEFAULT_EPSILON
    epsilon_change: float = wd.DEFAULT_EPSILON_CHANGE
    budget: int = 10000
    max_counterfactuals: int = 5  # reported instances; the search itself is uncapped

    def __post_init__(self):
        if self.n_samples < 100:
            raise ValueError("n_samples must be >= 100")
        if self.kernel_width <= 0.0:
            raise ValueError("kernel_width must be positive")
        if self.cost_metric not in cf.METRICS:
            raise ValueError(f"unknown cost metric {self.cost_metric!r}")
        if self.sparsity_cap < 1:
            raise ValueError("sparsity_cap must be >= 1")
        if not (0.0 <= self.plausibility_floor <= 1.0):
            raise ValueError("plausibility_floor must lie in [0, 1]")
        if self.link not in sg.LINKS:
            raise ValueError(f"unknown link {self.link!r}")
        if self.ridge < 0.0:
            raise ValueError("ridge must be >= 0")
        if self.max_terms < 0:
            raise ValueError("max_terms must be >= 0")
        if self.epsilon <= 0.0 or self.epsilon_change <= 0.0:
            raise ValueError("epsilon and epsilon_change must be positive")
        if self.budget < 1000:
            raise ValueError("budget must be >= 1000")
        if self.max_counterfactuals < 1:
            raise ValueError("max_counterfactuals must be >= 1")


def config_to_dict(c: EngineConfig) -> dict:
    return {f.name: getattr(c, f.name) for f in dataclasses.fields(EngineConfig)}


def config_from_dict(doc: dict) -> EngineConfig:
    known = {f.name for f in dataclasses.fields(EngineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return EngineConfig(**doc)


@dataclass(frozen=True)
class ReportCounterfactual:
    instance: cf.CounterfactualInstance
    y_estimate: float
    fidelity_error: float


@dataclass(frozen=True)
class FidelitySummary:
    max: float
    mean: float
    count: int


@dataclass(frozen=True)
class ExplanationReport:
    """Equation + counterfactuals + fidelity statistics + certificate."""

    schema: FeatureSchema
    observation: Observation
    prediction: Prediction
    equation: sg.CausalEquation
    counterfactuals: tuple[ReportCounterfactual, ...]
    fidelity_summary: FidelitySummary
    certificate: wd.WoodwardCertificate
    feature_weights: tuple[tuple[str, float], ...]
    config: EngineConfig
    model_id: str
    dataset_fingerprint: str
    distance_scales: tuple[float, ...]
    query_count: int
    neighbourhood_balanced: bool
    model_deterministic: bool
    version: str = ENGINE_VERSION


def dataset_fingerprint(d: Dataset) -> str:
    doc = {
        "rows": [r.to_dict(d.schema) for r in d.rows],
        "labels": list(d.labels) if d.labels is not None else None,
    }
    return "sha256:" + hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()[:16]


def _feature_weights(eq: sg.CausalEquation, mads: tuple[float, ...],
                     s: FeatureSchema) -> tuple[tuple[str, float], ...]:
    """Standardized per-feature effect magnitudes for the bar chart.

    Linear terms contribute |coef| * MAD, quadratics |coef| * MAD^2,
    interactions |coef| * MAD_a * MAD_b to both features; a categorical
    feature contributes the spread of its indicator coefficients (absent
    levels count as coefficient 0).
    """
    weights = {name: 0.0 for name in s.names}
    indicator_coefs: dict[str, list[float]] = {}
    mad_of = dict(zip(s.names, mads))
    for t, b in zip(eq.terms, eq.coefficients):
        b = float(b)
        if t.kind == sg.LINEAR:
            weights[t.features[0]] += abs(b) * mad_of[t.features[0]]
        elif t.kind == sg.QUADRATIC:
            weights[t.features[0]] += abs(b) * mad_of[t.features[0]] ** 2
        elif t.kind == sg.INTERACTION:
            f1, f2 = t.features
            contribution = abs(b) * mad_of[f1] * mad_of[f2]
            weights[f1] += contribution
            weights[f2] += contribution
        elif t.kind == sg.INDICATOR:
            indicator_coefs.setdefault(t.features[0], []).append(b)
    for name, coefs in indicator_coefs.items():
        if len(coefs) < len(s.feature(name).levels):
            coefs = coefs + [0.0]
        weights[name] += max(coefs) - min(coefs)
    return tuple((name, weights[name]) for name in s.names)


def explain(m: BlackBoxModel, d: Dataset, x: Observation, cfg: EngineConfig) -> ExplanationReport:
    """Produce the full explanation report; a pure function of its arguments."""
    s = m.schema
    if d.schema is not s and sc.schema_to_dict(d.schema) != sc.schema_to_dict(s):
        raise PipelineError("validate", sc.ValidationError("model and dataset schemas differ"))
    try:
        s.validate(x)
    except sc.ValidationError as exc:
        raise PipelineError("validate", exc) from exc

    total = QueryCounter()
    m_counted = dataclasses.replace(m, proba=counted_proba(m, total))

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise PipelineError(name, exc) from exc

    dists = stage("fit_distributions", sampling.fit_distributions, d, s)
    nbhd = stage(
        "generate_neighbourhood",
        sampling.generate_neighbourhood,
        m_counted, x, dists, cfg.n_samples, cfg.seed, cfg.kernel_width,
    )
    cost_cfg = cf.CostConfig(
        metric=cfg.cost_metric,
        mads=dists.mads(),
        sparsity_cap=cfg.sparsity_cap,
        plausibility_floor=cfg.plausibility_floor,
    )
    counterfactuals = stage(
        "search_counterfactuals",
        cf.search_counterfactuals,
        m_counted, x, cost_cfg, dists, cfg.budget,
    )[: cfg.max_counterfactuals]
    terms = stage("build_terms", sg.build_terms, s, cfg.quadratics, cfg.interactions)
    if cfg.max_terms >= 1:
        terms = stage(
            "stepwise_select",
            sg.stepwise_select,
            nbhd, counterfactuals, terms, cfg.max_terms, cfg.link, cfg.ridge,
        )
    equation = stage(
        "fit_equation", sg.fit_equation, nbhd, counterfactuals, terms, cfg.link, cfg.ridge
    )

    report_cfs = []
    for inst in counterfactuals:
        y_est = sg.evaluate(equation, inst.x_cf)
        report_cfs.append(
            ReportCounterfactual(
                instance=inst,
                y_estimate=y_est,
                fidelity_error=round(abs(y_est - inst.y_actual), 12),
            )
        )
    errors = [r.fidelity_error for r in report_cfs]
    summary = FidelitySummary(
        max=max(errors) if errors else 0.0,
        mean=float(sum(errors) / len(errors)) if errors else 0.0,
        count=len(errors),
    )

    certificate = stage(
        "certify",
        wd.certify,
        equation, m_counted, x, counterfactuals, cfg.epsilon,
        dists=dists, seed=cfg.seed, epsilon_change=cfg.epsilon_change,
    )

    report = ExplanationReport(
        schema=s,
        observation=x,
        prediction=predict(m, x),
        equation=equation,
        counterfactuals=tuple(report_cfs),
        fidelity_summary=summary,
        certificate=certificate,
        feature_weights=_feature_weights(equation, dists.mads(), s),
        config=cfg,
        model_id=m.identifier,
        dataset_fingerprint=dataset_fingerprint(d),
        distance_scales=tuple(float(v) for v in dists.encoded_scales()),
        query_count=total.count,
        neighbourhood_balanced=nbhd.balanced,
        model_deterministic=m.deterministic,
    )
    _verify_report(report, m)
    return report


def _verify_report(r: ExplanationReport, m: BlackBoxModel) -> None:
    """Post-assembly consistency re-check of stored counterfactual numbers."""
    for rc in r.counterfactuals:
        y_est = sg.evaluate(r.equation, rc.instance.x_cf)
        y_act = predict(m, rc.instance.x_cf).probability
        if y_est != rc.y_estimate or y_act != rc.instance.y_actual:
            raise PipelineError(
                "verify", RuntimeError("stored counterfactual outputs are not reproducible")
            )
        if round(abs(y_est - y_act), 12) != rc.fidelity_error:
            raise PipelineError("verify", RuntimeError("stored fidelity error is inconsistent"))


# --- canonical document serialization -------------------------------------

def canonical_json(doc) -> str:
    """Canonical form: sorted keys, no whitespace, shortest round-trip floats."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False, ensure_ascii=False)


def report_to_dict(r: ExplanationReport) -> dict:
    s = r.schema
    return {
        "engine_version": r.version,
        "schema": sc.schema_to_dict(s),
        "model_id": r.model_id,
        "dataset_fingerprint": r.dataset_fingerprint,
        "observation": r.observation.to_dict(s),
        "prediction": {"probability": r.prediction.probability, "label": r.prediction.label},
        "equation": sg.equation_to_dict(r.equation),
        "counterfactuals": [
            {
                "values": rc.instance.x_cf.to_dict(s),
                "delta": [
                    {"feature": c.feature, "before": c.before, "after": c.after}
                    for c in rc.instance.delta
                ],
                "cost": rc.instance.cost,
                "sparsity": rc.instance.sparsity,
                "y_actual": rc.instance.y_actual,
                "y_estimate": rc.y_estimate,
                "fidelity_error": rc.fidelity_error,
                "feasible": rc.instance.feasible,
                "plausible": rc.instance.plausible,
            }
            for rc in r.counterfactuals
        ],
        "fidelity_summary": {
            "max": r.fidelity_summary.max,
            "mean": r.fidelity_summary.mean,
            "count": r.fidelity_summary.count,
        },
        "certificate": wd.certificate_to_dict(r.certificate),
        "feature_weights": {name: w for name, w in r.feature_weights},
        "distance_scales": list(r.distance_scales),
        "config": config_to_dict(r.config),
        "flags": {
            "neighbourhood_balanced": r.neighbourhood_balanced,
            "model_deterministic": r.model_deterministic,
        },
        "query_count": r.query_count,
    }


def to_canonical(r: ExplanationReport) -> str:
    """Serialize the report so equal reports yield byte-identical documents."""
    return canonical_json(report_to_dict(r))


# --- rendering --------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:g}"
    return str(v)


def _bar_chart(weights, top: int = 5, width: int = 24) -> list[str]:
    ranked = sorted(enumerate(weights), key=lambda t: (-t[1][1], t[0]))[:top]
    scale = max((w for _, (_, w) in ranked), default=0.0)
    lines = []
    name_width = max((len(name) for _, (name, _) in ranked), default=0)
    for _, (name, w) in ranked:
        filled = int(round(width * (w / scale))) if scale > 0 else 0
        lines.append(f"  {name.ljust(name_width)}  {'#' * filled or '.'}  {w:.4f}")
    return lines


def _wachter_sentences(r: ExplanationReport) -> list[str]:
    s = r.schema
    names = ", ".join(s.names)
    values = ", ".join(_fmt(v) for v in r.observation.values)
    lines = [
        f'Score {r.prediction.probability:.6f} was returned because variables '
        f"({names}) had values ({values})."
    ]
    for rc in r.counterfactuals:
        changed_names = ", ".join(c.feature for c in rc.instance.delta)
        changed_values = ", ".join(_fmt(c.after) for c in rc.instance.delta)
        lines.append(
            f"If ({changed_names}) instead had values ({changed_values}), and all other "
            f"variables remained constant, score {rc.instance.y_actual:.6f} would have been returned."
        )
    return lines


def render(r: ExplanationReport, level: str = "customer") -> str:
    """Multi-level text report: customer < analyst < scientist detail."""
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}; choose from {LEVELS}")
    s = r.schema
    out: list[str] = []
    out.append(f"Explanation of {s.target_name} prediction")
    out.append(
        f"Prediction: {r.prediction.probability:.6f} -> {r.prediction.label} "
        f"(threshold {s.threshold:g})"
    )
    out.append("Observation: " + ", ".join(
        f"{n}={_fmt(v)}" for n, v in zip(s.names, r.observation.values)
    ))
    out.append("")
    out.append("Feature importance (standardized effect sizes):")
    out.extend(_bar_chart(r.feature_weights))
    out.append("")
    if r.counterfactuals:
        out.append("Counterfactuals:")
        out.extend("  " + line for line in _wachter_sentences(r))
    else:
        out.append(f"Counterfactuals: {NO_COUNTERFACTUALS_TEXT}")

    if level in ("analyst", "scientist"):
        out.append("")
        out.append("Local equation: " + sg.equation_string(r.equation))
        out.append(
            f"  fit: r2={r.equation.training_r2:.6f} (link space), rows={r.equation.n_rows}, "
            f"validity radius {r.equation.validity_radius:g} MAD units"
        )
        out.append("")
        out.append("Fidelity:")
        if r.counterfactuals:
            out.append("  change | actual | estimate | error")
            for rc in r.counterfactuals:
                change = "; ".join(
                    f"{c.feature}: {_fmt(c.before)} -> {_fmt(c.after)}" for c in rc.instance.delta
                )
                out.append(
                    f"  {change} | {rc.instance.y_actual:.6f} | {rc.y_estimate:.6f} "
                    f"| {rc.fidelity_error:.6f}"
                )
        out.append(
            f"  summary: max={r.fidelity_summary.max:.6f} mean={r.fidelity_summary.mean:.6f} "
            f"count={r.fidelity_summary.count}"
        )

    if level == "scientist":
        c = r.certificate
        out.append("")
        out.append(f"Certificate (epsilon={c.epsilon:g}, epsilon_change={c.epsilon_change:g}):")
        out.append(f"  condition (i)  approximate truth: {_passfail(c.condition_i)} "
                   f"(max fidelity error {c.max_fidelity_error:.6f})")
        out.append(f"  condition (ii) explanandum reproduced: {_passfail(c.condition_ii)} "
                   f"(residual {c.residual_at_x:.6f})")
        out.append(f"  condition (iii) testing intervention: {_passfail(c.condition_iii)}")
        if c.witness is not None:
            w = c.witness
            out.append(
                f"    witness: set {w.feature} to {_fmt_any(w.to_value)} "
                f"(model {w.y_model_before:.6f} -> {w.y_model_after:.6f}, "
                f"equation tracks at {w.y_eq_after:.6f})"
            )
        out.append(f"  invariant features: {', '.join(c.invariant_features) or 'none'}")
        out.append(f"  direct causes: {', '.join(c.direct_causes) or 'none'}")
        out.append(f"  overall: {_passfail(c.passed)}")
        out.append("")
        out.append("Config:")
        for key, value in sorted(config_to_dict(r.config).items()):
            out.append(f"  {key} = {value}")
        out.append(f"Model: {r.model_id} (deterministic: {r.model_deterministic})")
        out.append(f"Dataset: {r.dataset_fingerprint}")
        out.append(f"Model queries: {r.query_count}")
        out.append(f"Neighbourhood balanced: {r.neighbourhood_balanced}")
    return "\n".join(out) + "\n"


def _passfail(flag: bool) -> str:
    return "pass" if flag else "FAIL"


def _fmt_any(v) -> str:
    if isinstance(v, tuple):
        return "(" + ", ".join(_fmt(u) for u in v) + ")"
    return _fmt(v)
