"""The local equation recovers what the model actually computes.

When the black box is itself logistic, the logit-link weighted regression
recovers its weights to machine-level accuracy; on a curved model, quadratic
terms and stepwise selection pick up the right functional form.
"""

import numpy as np

from whybox import (
    BlackBoxModel,
    Dataset,
    FeatureDecl,
    FeatureSchema,
    fit_distributions,
    fit_equation,
    generate_neighbourhood,
    model_from_dict,
    observation_from_dict,
)
from whybox.surrogate import build_terms, equation_string, evaluate, stepwise_select

schema = FeatureSchema(
    features=(
        FeatureDecl("x1", "numeric", low=-3, high=3),
        FeatureDecl("x2", "numeric", low=-3, high=3),
    ),
    target_name="t",
    positive_label="p",
)
rng = np.random.default_rng(0)
rows = tuple(
    observation_from_dict(
        schema, {f.name: float(np.clip(rng.normal(0, 1), -3, 3)) for f in schema.features}
    )
    for _ in range(250)
)
data = Dataset(schema=schema, rows=rows)
dists = fit_distributions(data, schema)
x = observation_from_dict(schema, {"x1": 0.3, "x2": -0.2})

# --- exact recovery of a logistic model -----------------------------------------
true_w, true_b = [1.25, -0.8], 0.1
logistic = model_from_dict({"kind": "logistic", "weights": true_w, "bias": true_b}, schema)
nbhd = generate_neighbourhood(logistic, x, dists, 1000, seed=0, kernel_width=1.0)
eq = fit_equation(nbhd, [], build_terms(schema), link="logit", ridge=1e-6)

print("logistic black box:", {"weights": true_w, "bias": true_b})
print("recovered equation:", equation_string(eq))
print(f"max weight error: {np.max(np.abs(eq.coefficients[1:] - true_w)):.2e}")
print(f"bias error:       {abs(eq.coefficients[0] - true_b):.2e}")
print(f"r2 (link space):  {eq.training_r2:.10f}\n")

# --- a curved model needs a quadratic term ----------------------------------------
curved = BlackBoxModel(
    "curved", "custom", schema, lambda E: np.clip(0.1 + 0.4 * E[:, 0] ** 2, 0.0, 1.0)
)
nbhd_curved = generate_neighbourhood(curved, x, dists, 1000, seed=1, kernel_width=1.0)

linear_only = fit_equation(nbhd_curved, [], build_terms(schema), link="identity", ridge=1e-9)
with_quads = fit_equation(
    nbhd_curved, [], build_terms(schema, quadratics=True), link="identity", ridge=1e-9
)
print("curved black box y = 0.1 + 0.4*x1^2")
print(f"linear-only fit r2:     {linear_only.training_r2:.4f}")
print(f"with quadratic terms:   {with_quads.training_r2:.10f}")
print("fitted:", equation_string(with_quads), "\n")

# --- stepwise selection keeps only what earns its complexity ------------------------
candidates = build_terms(schema, quadratics=True, interactions=True)[1:]
chosen = stepwise_select(nbhd_curved, [], candidates, max_terms=4, link="identity", ridge=1e-9)
print("stepwise-selected terms:", [t.label() for t in chosen])

probe = observation_from_dict(schema, {"x1": 1.0, "x2": 0.0})
print(f"\nequation at x1=1: {evaluate(with_quads, probe):.6f} (model: 0.5)")
