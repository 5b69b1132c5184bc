"""Counterfactual search under constraints, step by step.

Shows the raw single-feature boundary search, how cost metrics change the
ranking, and how immutability / monotonic direction / plausibility shape
what the search is allowed to return.
"""

import numpy as np

from whybox import (
    CostConfig,
    Dataset,
    FeatureDecl,
    FeatureSchema,
    boundary_line_search,
    check_feasibility,
    check_plausibility,
    delta_cost,
    fit_distributions,
    model_from_dict,
    observation_from_dict,
    predict,
    search_counterfactuals,
)

schema = FeatureSchema(
    features=(
        FeatureDecl("income", "numeric", low=0, high=200000, monotonic="increase_only"),
        FeatureDecl("age", "numeric", low=18, high=100, immutable=True),
        FeatureDecl("education", "categorical", levels=("none", "graduate")),
    ),
    target_name="loan",
    positive_label="approved",
)

# approve iff income >= 34000 AND education == graduate
grad_indicator = 2 + schema.feature("education").levels.index("graduate")
model = model_from_dict(
    {
        "kind": "tree",
        "nodes": [
            {"feature": "income", "op": "<", "value": 34000, "left": 1, "right": 2},
            {"leaf": 0.3},
            {"feature": grad_indicator, "op": "<", "value": 0.5, "left": 3, "right": 4},
            {"leaf": 0.3},
            {"leaf": 0.7},
        ],
    },
    schema,
)

rng = np.random.default_rng(1)
rows = tuple(
    observation_from_dict(
        schema,
        {
            "income": float(np.clip(rng.normal(40000, 15000), 0, 200000)),
            "age": float(np.clip(rng.normal(45, 12), 18, 100)),
            "education": "graduate" if i % 2 == 0 else "none",
        },
    )
    for i in range(300)
)
data = Dataset(schema=schema, rows=rows)
dists = fit_distributions(data, schema)

x = observation_from_dict(schema, {"income": 32000, "age": 45, "education": "none"})
print(f"observation: {x.to_dict(schema)}")
print(f"prediction:  {predict(model, x)}\n")

# --- single-feature boundary search ------------------------------------------------
# No single income value can flip this model for a non-graduate, and education
# alone cannot flip it at 32000 either:
print("single-feature flips:")
for feature in ("income", "education"):
    flip = boundary_line_search(model, x, feature, tol=0.5)
    print(f"  {feature}: {flip.to_dict(schema) if flip else 'no flip in range'}")

# --- the full search finds the joint change ----------------------------------------
cfg = CostConfig(metric="L1_MAD", mads=dists.mads(), sparsity_cap=2, plausibility_floor=0.99)
results = search_counterfactuals(model, x, cfg, dists, budget=10000)
print("\ntop counterfactuals (cost ascending, L1_MAD units):")
for inst in results[:3]:
    changes = ", ".join(f"{c.feature}: {c.before} -> {c.after}" for c in inst.delta)
    print(f"  cost {inst.cost:8.4f}  sparsity {inst.sparsity}  [{changes}]  y={inst.y_actual}")

top = results[0]
print("\nconstraint checks on the top result:")
print(f"  feasible:  {check_feasibility(schema, x, top.x_cf)}")
print(f"  plausible: {check_plausibility(top.x_cf, dists, 0.99)}")
print(f"  flips:     {predict(model, top.x_cf).label} vs {predict(model, x).label}")

# --- cost metrics rank deltas differently -------------------------------------------
x_income = top.x_cf
for metric in ("L1", "L2", "L1_MAD"):
    c = CostConfig(metric=metric, mads=dists.mads(), sparsity_cap=2)
    print(f"  cost under {metric:6}: {delta_cost(schema, x, x_income, c):.4f}")

# --- monotonic directions are respected ----------------------------------------------
# income is increase_only here: a cheaper decrease would be rejected
down = x.replace(schema, "income", 20000)
print(f"\nincome decrease feasible? {check_feasibility(schema, x, down)} (increase_only)")
