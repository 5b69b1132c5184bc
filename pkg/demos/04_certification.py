"""What the certificate actually certifies, and what makes it fail.

Three conditions: (i) the equation is approximately true around the
observation, (ii) it reproduces the explained prediction itself, (iii) some
testing intervention changes the model with the equation describing the new
value. A faithful surrogate passes; a constant one cannot, however low its
average error: it never describes any change.
"""

import numpy as np

from whybox import (
    Dataset,
    FeatureDecl,
    FeatureSchema,
    certify,
    direct_causes,
    fidelity_error,
    fit_distributions,
    fit_equation,
    generate_neighbourhood,
    model_from_dict,
    observation_from_dict,
    predict,
    testing_intervention,
)
from whybox.surrogate import CausalEquation, build_terms, intercept
from whybox.woodward import recheck_certificate, certificate_to_dict

schema = FeatureSchema(
    features=(
        FeatureDecl("x1", "numeric", low=-3, high=3),
        FeatureDecl("x2", "numeric", low=-3, high=3),
        FeatureDecl("x3", "numeric", low=-3, high=3),  # the model ignores this one
    ),
    target_name="t",
    positive_label="p",
)
model = model_from_dict({"kind": "logistic", "weights": [1.0, -0.8, 0.0], "bias": 0.0}, schema)

rng = np.random.default_rng(0)
rows = tuple(
    observation_from_dict(
        schema, {f.name: float(np.clip(rng.normal(0, 1), -3, 3)) for f in schema.features}
    )
    for _ in range(200)
)
data = Dataset(schema=schema, rows=rows)
dists = fit_distributions(data, schema)
x = observation_from_dict(schema, {"x1": 0.4, "x2": 0.1, "x3": -1.0})

# --- a faithful surrogate ------------------------------------------------------------
nbhd = generate_neighbourhood(model, x, dists, 800, seed=0, kernel_width=1.0)
faithful = fit_equation(nbhd, [], build_terms(schema), link="logit", ridge=1e-6)
cert = certify(faithful, model, x, [], epsilon=1e-3, dists=dists, seed=0)
print("faithful surrogate:")
print(f"  (i) approximately true: {cert.condition_i} (max error {cert.max_fidelity_error:.2e})")
print(f"  (ii) explanandum reproduced: {cert.condition_ii} (residual {cert.residual_at_x:.2e})")
print(f"  (iii) testing intervention: {cert.condition_iii}")
print(f"  invariant features: {cert.invariant_features}")
print(f"  direct causes: {cert.direct_causes}  <- x3 correctly excluded")

# --- the constant impostor ----------------------------------------------------------
constant = CausalEquation(
    schema=schema,
    terms=(intercept(),),
    coefficients=np.array([predict(model, x).probability]),
    link="identity",
    center=x,
    validity_radius=2.0,
    training_r2=0.0,
    n_rows=1,
)
cert_const = certify(constant, model, x, [], epsilon=0.05, dists=dists, seed=0)
print("\nconstant 'surrogate' (matches the prediction at x exactly):")
print(f"  (i) {cert_const.condition_i}   (ii) {cert_const.condition_ii}   (iii) {cert_const.condition_iii}")
print("  it answers no what-if question, so condition (iii) can never hold")

# --- a single testing intervention, inspected ----------------------------------------
probe = testing_intervention(faithful, model, x, "x1", 1.5, epsilon=1e-3)
print("\nintervention x1 -> 1.5, everything else held fixed:")
print(f"  model: {probe.y_model_before:.6f} -> {probe.y_model_after:.6f}")
print(f"  equation: {probe.y_eq_before:.6f} -> {probe.y_eq_after:.6f}")
print(f"  model_changed={probe.model_changed} eq_changed={probe.eq_changed} eq_tracks={probe.eq_tracks}")

# --- re-thresholding a stored certificate ---------------------------------------------
doc = certificate_to_dict(cert)
for eps in (1e-5, 1e-3, 0.05):
    again = recheck_certificate(doc, eps)
    print(f"\nrecheck at epsilon={eps}: passed={again['passed']}")

print(f"\nfidelity error at a far probe: "
      f"{fidelity_error(faithful, model, observation_from_dict(schema, {'x1': 2.5, 'x2': -2.5, 'x3': 0.0})):.2e}")
print(f"direct causes at grid 64: {direct_causes(model, x, schema, probes=64)}")
