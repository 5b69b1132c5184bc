import numpy as np
import pytest

from whybox.model import model_from_dict
from whybox.schema import Dataset, FeatureDecl, FeatureSchema, observation_from_dict


@pytest.fixture
def jones_schema():
    return FeatureSchema(
        features=(
            FeatureDecl("income", "numeric", low=0, high=200000),
            FeatureDecl("age", "numeric", low=18, high=100, immutable=True),
            FeatureDecl("education", "categorical", levels=("none", "graduate")),
        ),
        target_name="loan",
        positive_label="approved",
        threshold=0.5,
    )


@pytest.fixture
def jones_x(jones_schema):
    return observation_from_dict(
        jones_schema, {"income": 32000, "age": 45, "education": "graduate"}
    )


@pytest.fixture
def jones_dataset(jones_schema):
    # spread wide enough that an income of 35000 stays well inside the
    # plausibility band; both education levels observed
    rng = np.random.default_rng(11)
    rows = []
    for i in range(300):
        rows.append(
            observation_from_dict(
                jones_schema,
                {
                    "income": float(np.clip(rng.normal(40000, 15000), 0, 200000)),
                    "age": float(np.clip(rng.normal(45, 12), 18, 100)),
                    "education": "graduate" if i % 2 == 0 else "none",
                },
            )
        )
    return Dataset(schema=jones_schema, rows=tuple(rows))


@pytest.fixture
def jones_model(jones_schema):
    """Approve iff income >= 35000."""
    return model_from_dict(
        {
            "kind": "tree",
            "nodes": [
                {"feature": "income", "op": "<", "value": 35000, "left": 1, "right": 2},
                {"leaf": 0.3},
                {"leaf": 0.7},
            ],
        },
        jones_schema,
    )


@pytest.fixture
def adult_schema():
    return FeatureSchema(
        features=(
            FeatureDecl("age", "numeric", low=17, high=90, immutable=True),
            FeatureDecl("hours_per_week", "numeric", low=1, high=99),
            FeatureDecl("marital", "categorical", levels=("single", "married", "divorced")),
        ),
        target_name="income_over_50k",
        positive_label="over_50k",
        threshold=0.5,
    )


@pytest.fixture
def adult_x(adult_schema):
    return observation_from_dict(
        adult_schema, {"age": 40, "hours_per_week": 45, "marital": "single"}
    )


@pytest.fixture
def adult_dataset(adult_schema):
    rng = np.random.default_rng(5)
    levels = ("single", "married", "divorced")
    rows = []
    for i in range(240):
        rows.append(
            observation_from_dict(
                adult_schema,
                {
                    "age": float(np.clip(rng.normal(42, 11), 17, 90)),
                    "hours_per_week": float(np.clip(rng.normal(42, 9), 1, 99)),
                    "marital": levels[i % 3],
                },
            )
        )
    return Dataset(schema=adult_schema, rows=tuple(rows))


@pytest.fixture
def married_model(adult_schema):
    """Probability 0.57 when married, 0.30 otherwise (split on the indicator)."""
    married_idx = 2 + adult_schema.feature("marital").levels.index("married")
    return model_from_dict(
        {
            "kind": "tree",
            "nodes": [
                {"feature": married_idx, "op": "<", "value": 0.5, "left": 1, "right": 2},
                {"leaf": 0.30},
                {"leaf": 0.57},
            ],
        },
        adult_schema,
    )
