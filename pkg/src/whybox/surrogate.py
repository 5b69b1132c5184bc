"""Local surrogate equations: weighted ridge regression over the neighbourhood.

The regression dataset is the synthetic neighbourhood augmented with the
discovered counterfactual instances (weighted at the neighbourhood maximum,
so the decision boundary region counts most). Terms may include quadratics,
pairwise interactions and per-level indicators; the logit link recovers
logistic black boxes exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import schema as sc
from .counterfactual import CounterfactualInstance
from .model import sigmoid
from .sampling import Neighbourhood, mad_distance
from .schema import FeatureSchema, Observation, encode_batch, encode_observation

INTERCEPT = "intercept"
LINEAR = "linear"
QUADRATIC = "quadratic"
INTERACTION = "interaction"
INDICATOR = "indicator"

IDENTITY = "identity"
LOGIT = "logit"
LINKS = (IDENTITY, LOGIT)

# probabilities are clamped into [EPS_Y, 1 - EPS_Y] before taking logits
EPS_Y = 1e-6

# a fitted equation is trusted within this many kernel widths of its center
VALIDITY_RADIUS_WIDTHS = 2.0

_RSS_FLOOR = 1e-12


class FitError(RuntimeError):
    """Raised when the weighted ridge system cannot be solved."""


@dataclass(frozen=True)
class Term:
    """One regression term over encoded features."""

    kind: str
    features: tuple[str, ...] = ()
    level: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if self.kind == INTERACTION and (
            len(self.features) != 2 or self.features[0] == self.features[1]
        ):
            raise ValueError("interaction terms need two distinct features")
        if self.kind == INDICATOR and (len(self.features) != 1 or self.level is None):
            raise ValueError("indicator terms need one feature and a level")
        if self.kind in (LINEAR, QUADRATIC) and len(self.features) != 1:
            raise ValueError(f"{self.kind} terms need exactly one feature")
        if self.kind == INTERCEPT and (self.features or self.level is not None):
            raise ValueError("intercept terms carry no features")

    def label(self) -> str:
        if self.kind == INTERCEPT:
            return "1"
        if self.kind == LINEAR:
            return self.features[0]
        if self.kind == QUADRATIC:
            return f"{self.features[0]}^2"
        if self.kind == INTERACTION:
            return f"{self.features[0]}*{self.features[1]}"
        return f"[{self.features[0]}={self.level}]"


def intercept() -> Term:
    return Term(INTERCEPT)


def linear(feature: str) -> Term:
    return Term(LINEAR, (feature,))


def quadratic(feature: str) -> Term:
    return Term(QUADRATIC, (feature,))


def interaction(f1: str, f2: str) -> Term:
    return Term(INTERACTION, (f1, f2))


def indicator(feature: str, level: str) -> Term:
    return Term(INDICATOR, (feature,), level)


def build_terms(s: FeatureSchema, quadratics: bool = False, interactions: bool = False) -> list[Term]:
    """Deterministic term list: intercept, per-feature linears/indicators in
    schema order, then quadratics (numeric features), then pairwise
    interactions of non-categorical features in lexicographic index order."""
    terms: list[Term] = [intercept()]
    for f in s.features:
        if f.kind == sc.CATEGORICAL:
            terms.extend(indicator(f.name, lvl) for lvl in f.levels)
        else:
            terms.append(linear(f.name))
    if quadratics:
        terms.extend(quadratic(f.name) for f in s.features if f.kind == sc.NUMERIC)
    if interactions:
        non_cat = [f.name for f in s.features if f.kind != sc.CATEGORICAL]
        for i in range(len(non_cat)):
            for j in range(i + 1, len(non_cat)):
                terms.append(interaction(non_cat[i], non_cat[j]))
    return terms


def _encoded_column(s: FeatureSchema, E: np.ndarray, feature: str) -> np.ndarray:
    decl = s.feature(feature)
    if decl.kind == sc.CATEGORICAL:
        raise ValueError(f"feature {feature!r} is categorical; use indicator terms")
    return E[:, s.encoded_offsets()[s.index(feature)]]


def design_matrix(s: FeatureSchema, terms: list[Term], E: np.ndarray) -> np.ndarray:
    cols = []
    for t in terms:
        if t.kind == INTERCEPT:
            cols.append(np.ones(E.shape[0]))
        elif t.kind == LINEAR:
            cols.append(_encoded_column(s, E, t.features[0]))
        elif t.kind == QUADRATIC:
            cols.append(_encoded_column(s, E, t.features[0]) ** 2)
        elif t.kind == INTERACTION:
            cols.append(
                _encoded_column(s, E, t.features[0]) * _encoded_column(s, E, t.features[1])
            )
        elif t.kind == INDICATOR:
            decl = s.feature(t.features[0])
            off = s.encoded_offsets()[s.index(t.features[0])]
            cols.append(E[:, off + decl.levels.index(t.level)])
        else:
            raise ValueError(f"unknown term kind {t.kind!r}")
    return np.column_stack(cols)


@dataclass(frozen=True)
class CausalEquation:
    """A local invariant generalisation from feature values to the prediction."""

    schema: FeatureSchema
    terms: tuple[Term, ...]
    coefficients: np.ndarray
    link: str
    center: Observation
    validity_radius: float
    training_r2: float
    n_rows: int

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        object.__setattr__(
            self, "coefficients", np.asarray(self.coefficients, dtype=np.float64)
        )
        if len(self.terms) != self.coefficients.shape[0]:
            raise ValueError("terms and coefficients must align")
        if self.link not in LINKS:
            raise ValueError(f"unknown link {self.link!r}")

    def coefficient(self, term: Term) -> float:
        return float(self.coefficients[self.terms.index(term)])


def link_forward(y: np.ndarray, link: str) -> np.ndarray:
    if link == IDENTITY:
        return np.asarray(y, dtype=np.float64)
    y = np.clip(np.asarray(y, dtype=np.float64), EPS_Y, 1.0 - EPS_Y)
    return np.log(y / (1.0 - y))


def link_inverse(z, link: str):
    if link == IDENTITY:
        return z
    return sigmoid(z)


def _solve_weighted_ridge(X: np.ndarray, z: np.ndarray, w: np.ndarray, ridge: float,
                          penalty_mask: np.ndarray) -> np.ndarray:
    A = X.T @ (X * w[:, None])
    b = X.T @ (w * z)
    lam = ridge
    for attempt in range(4):
        try:
            factor = cho_factor(A + lam * np.diag(penalty_mask), lower=True)
            return cho_solve(factor, b)
        except LinAlgError:
            if attempt == 3:
                break
            lam = lam * 10.0 if lam > 0.0 else 1e-8
    raise FitError(f"weighted ridge system singular even at lambda={lam}")


def _assemble_rows(nbhd: Neighbourhood, cfs: list[CounterfactualInstance]):
    E = nbhd.encoded
    y = nbhd.y
    w = nbhd.weights
    if cfs:
        w_cf = float(np.max(w))
        E_cf = encode_batch(nbhd.schema, [c.x_cf for c in cfs])
        E = np.vstack([E, E_cf])
        y = np.concatenate([y, [c.y_actual for c in cfs]])
        w = np.concatenate([w, np.full(len(cfs), w_cf)])
    return E, y, w


def fit_equation(nbhd: Neighbourhood, cfs: list[CounterfactualInstance], terms: list[Term],
                 link: str = LOGIT, ridge: float = 1e-6) -> CausalEquation:
    """Fit the local equation on neighbourhood + counterfactual rows.

    Counterfactual rows enter at the maximum neighbourhood weight. Identity
    link regresses the probability directly; logit link regresses
    logit(clamp(y)). The intercept is never penalized; the ridge penalty on
    the remaining coefficients is raised tenfold (up to three times) if the
    normal equations are singular.
    """
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}")
    if ridge < 0.0:
        raise ValueError("ridge must be >= 0")
    E, y, w = _assemble_rows(nbhd, cfs)
    X = design_matrix(nbhd.schema, terms, E)
    if X.shape[0] < X.shape[1]:
        raise FitError(f"{X.shape[0]} rows cannot determine {X.shape[1]} terms")
    z = link_forward(y, link)
    penalty_mask = np.array([0.0 if t.kind == INTERCEPT else 1.0 for t in terms])
    beta = _solve_weighted_ridge(X, z, w, ridge, penalty_mask)

    resid = z - X @ beta
    ss_res = float(np.sum(w * resid**2))
    z_bar = float(np.sum(w * z) / np.sum(w))
    ss_tot = float(np.sum(w * (z - z_bar) ** 2))
    if ss_tot <= 0.0:
        r2 = 1.0 if ss_res <= 1e-18 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot

    return CausalEquation(
        schema=nbhd.schema,
        terms=tuple(terms),
        coefficients=beta,
        link=link,
        center=nbhd.center,
        validity_radius=VALIDITY_RADIUS_WIDTHS * nbhd.kernel_width,
        training_r2=r2,
        n_rows=X.shape[0],
    )


def evaluate_raw(eq: CausalEquation, x: Observation) -> tuple[float, float, bool]:
    """(link-space value, probability, clamped?) of the equation at x."""
    E = encode_observation(eq.schema, x).reshape(1, -1)
    raw = float(design_matrix(eq.schema, list(eq.terms), E)[0] @ eq.coefficients)
    if eq.link == IDENTITY:
        prob = min(max(raw, 0.0), 1.0)
        return raw, prob, prob != raw
    return raw, float(sigmoid(np.array([raw]))[0]), False


def evaluate(eq: CausalEquation, x: Observation) -> float:
    """Probability the equation assigns at x (inverse link, clamped to [0, 1])."""
    return evaluate_raw(eq, x)[1]


def inside_validity(eq: CausalEquation, x: Observation, scales: np.ndarray) -> bool:
    d = mad_distance(
        encode_observation(eq.schema, x), encode_observation(eq.schema, eq.center), scales
    )
    return d <= eq.validity_radius


def weighted_bic(X: np.ndarray, z: np.ndarray, w: np.ndarray, beta: np.ndarray) -> float:
    n = X.shape[0]
    rss = max(float(np.sum(w * (z - X @ beta) ** 2)), _RSS_FLOOR)
    return n * math.log(rss / n) + X.shape[1] * math.log(n)


def stepwise_select(nbhd: Neighbourhood, cfs: list[CounterfactualInstance],
                    candidates: list[Term], max_terms: int,
                    link: str = LOGIT, ridge: float = 1e-6) -> list[Term]:
    """Forward stepwise term selection by weighted BIC.

    Starts from {intercept}; greedily adds the candidate that lowers BIC the
    most, stopping at ``max_terms`` or when no candidate improves it. Ties
    break on candidate list order.
    """
    if max_terms < 1:
        raise ValueError("max_terms must be >= 1")
    E, y, w = _assemble_rows(nbhd, cfs)
    z = link_forward(y, link)
    s = nbhd.schema

    selected: list[Term] = [intercept()]
    remaining = [t for t in candidates if t.kind != INTERCEPT]

    def bic_of(terms: list[Term]) -> float:
        X = design_matrix(s, terms, E)
        mask = np.array([0.0 if t.kind == INTERCEPT else 1.0 for t in terms])
        beta = _solve_weighted_ridge(X, z, w, ridge, mask)
        return weighted_bic(X, z, w, beta)

    current = bic_of(selected)
    while len(selected) < max_terms and remaining:
        best_idx, best_bic = None, current
        for i, t in enumerate(remaining):
            if t in selected:
                continue
            b = bic_of(selected + [t])
            if b < best_bic:
                best_idx, best_bic = i, b
        if best_idx is None:
            break
        selected.append(remaining.pop(best_idx))
        current = best_bic
    return selected


def equation_string(eq: CausalEquation, precision: int = 6) -> str:
    """Human-readable form, e.g. ``logit(y) = 0.5 + 1.2*income``."""
    lhs = "y" if eq.link == IDENTITY else "logit(y)"
    parts = []
    for t, b in zip(eq.terms, eq.coefficients):
        coeff = f"{b:+.{precision}g}"
        parts.append(coeff if t.kind == INTERCEPT else f"{coeff}*{t.label()}")
    rhs = " ".join(parts) if parts else "0"
    return f"{lhs} = {rhs}"


def term_to_dict(t: Term) -> dict:
    d: dict = {"kind": t.kind}
    if t.features:
        d["features"] = list(t.features)
    if t.level is not None:
        d["level"] = t.level
    return d


def term_from_dict(d) -> Term:
    return Term(d["kind"], tuple(d.get("features", ())), d.get("level"))


def equation_to_dict(eq: CausalEquation) -> dict:
    return {
        "terms": [term_to_dict(t) for t in eq.terms],
        "coefficients": [float(b) for b in eq.coefficients],
        "link": eq.link,
        "center": eq.center.to_dict(eq.schema),
        "validity_radius": eq.validity_radius,
        "training_r2": eq.training_r2,
        "n_rows": eq.n_rows,
    }


def equation_from_dict(d, s: FeatureSchema) -> CausalEquation:
    return CausalEquation(
        schema=s,
        terms=tuple(term_from_dict(t) for t in d["terms"]),
        coefficients=np.asarray(d["coefficients"], dtype=np.float64),
        link=d["link"],
        center=sc.observation_from_dict(s, d["center"]),
        validity_radius=float(d["validity_radius"]),
        training_r2=float(d["training_r2"]),
        n_rows=int(d["n_rows"]),
    )
