"""End-to-end walkthrough: one loan decision, fully explained.

A small tree model approves a loan when income reaches 35000. We explain its
decision for an applicant at 32000 and print the report at all three levels.
"""

import numpy as np

from whybox import (
    Dataset,
    EngineConfig,
    FeatureDecl,
    FeatureSchema,
    explain,
    model_from_dict,
    observation_from_dict,
    render,
)

# 1. Declare the feature space. Age is immutable: recourse may never ask the
#    applicant to get younger (or older).
schema = FeatureSchema(
    features=(
        FeatureDecl("income", "numeric", low=0, high=200000),
        FeatureDecl("age", "numeric", low=18, high=100, immutable=True),
        FeatureDecl("education", "categorical", levels=("none", "graduate")),
    ),
    target_name="loan",
    positive_label="approved",
    threshold=0.5,
)

# 2. The system under explanation: query access only. Here a tiny tree.
model = model_from_dict(
    {
        "kind": "tree",
        "nodes": [
            {"feature": "income", "op": "<", "value": 35000, "left": 1, "right": 2},
            {"leaf": 0.3},
            {"leaf": 0.7},
        ],
    },
    schema,
)

# 3. Training data: used only to fit perturbation distributions, MAD scales
#    and the plausibility bands. Labels are never needed.
rng = np.random.default_rng(0)
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

# 4. The applicant and the explanation.
x = observation_from_dict(schema, {"income": 32000, "age": 45, "education": "graduate"})
report = explain(model, data, x, EngineConfig(seed=0, cost_metric="L1"))

print("=" * 72)
print("CUSTOMER VIEW")
print("=" * 72)
print(render(report, "customer"))

print("=" * 72)
print("ANALYST VIEW (adds the local equation and the fidelity table)")
print("=" * 72)
print(render(report, "analyst"))

print("=" * 72)
print("SCIENTIST VIEW (adds the certificate and the config echo)")
print("=" * 72)
print(render(report, "scientist"))
