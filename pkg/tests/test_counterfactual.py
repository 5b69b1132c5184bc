import itertools
import math

import numpy as np
import pytest

from whybox.counterfactual import (
    CostConfig,
    boundary_line_search,
    check_feasibility,
    check_plausibility,
    delta_cost,
    search_counterfactuals,
)
from whybox.model import QueryCounter, class_of, model_from_dict, predict
from whybox.sampling import fit_distributions
from whybox.schema import (
    Dataset,
    FeatureDecl,
    FeatureSchema,
    Observation,
    observation_from_dict,
)


def cfg_for(dists, metric="L1", cap=2, floor=0.99):
    return CostConfig(metric=metric, mads=dists.mads(), sparsity_cap=cap, plausibility_floor=floor)


# --- cost -------------------------------------------------------------------

def test_delta_cost_jones(jones_schema, jones_x):
    cfg = CostConfig(metric="L1", mads=(10000.0, 1.0, 1.0))
    x_cf = jones_x.replace(jones_schema, "income", 35000)
    assert delta_cost(jones_schema, jones_x, x_cf, cfg) == 3000.0


def test_delta_cost_zero_for_identity(jones_schema, jones_x):
    for metric in ("L1", "L2", "L1_MAD"):
        cfg = CostConfig(metric=metric, mads=(10000.0, 1.0, 1.0))
        assert delta_cost(jones_schema, jones_x, jones_x, cfg) == 0.0


def test_delta_cost_l1_mad(jones_schema, jones_x):
    cfg = CostConfig(metric="L1_MAD", mads=(10000.0, 1.0, 1.0))
    x_cf = jones_x.replace(jones_schema, "income", 35000)
    assert delta_cost(jones_schema, jones_x, x_cf, cfg) == pytest.approx(0.3)


def test_delta_cost_categorical_unit(jones_schema, jones_x):
    cfg = CostConfig(metric="L1", mads=(10000.0, 1.0, 1.0))
    x_cf = jones_x.replace(jones_schema, "education", "none")
    assert delta_cost(jones_schema, jones_x, x_cf, cfg) == 1.0
    cfg2 = CostConfig(metric="L2", mads=(10000.0, 1.0, 1.0))
    both = x_cf.replace(jones_schema, "income", 35000)
    assert delta_cost(jones_schema, jones_x, both, cfg2) == pytest.approx(
        math.sqrt(3000.0**2 + 1.0)
    )


# --- feasibility --------------------------------------------------------------

def test_immutable_age_change_infeasible(jones_schema, jones_x):
    x_cf = jones_x.replace(jones_schema, "age", 44)
    assert check_feasibility(jones_schema, jones_x, x_cf) is False


def test_identity_is_feasible(jones_schema, jones_x):
    assert check_feasibility(jones_schema, jones_x, jones_x) is True


def test_monotonic_direction():
    s = FeatureSchema(
        features=(FeatureDecl("income", "numeric", low=0, high=100000, monotonic="increase_only"),),
        target_name="t",
        positive_label="p",
    )
    x = observation_from_dict(s, {"income": 32000})
    assert check_feasibility(s, x, x.replace(s, "income", 35000)) is True
    assert check_feasibility(s, x, x.replace(s, "income", 31000)) is False


# --- plausibility --------------------------------------------------------------

def test_mean_is_plausible(jones_schema, jones_dataset):
    dists = fit_distributions(jones_dataset, jones_schema)
    at_mean = observation_from_dict(
        jones_schema,
        {
            "income": dists.numeric["income"].mean,
            "age": dists.numeric["age"].mean,
            "education": "graduate",
        },
    )
    for theta in (0.0, 0.5, 0.9, 0.99):
        assert check_plausibility(at_mean, dists, theta) is True


def test_ten_sigma_value_implausible(jones_schema, jones_dataset):
    dists = fit_distributions(jones_dataset, jones_schema)
    stats = dists.numeric["income"]
    far = min(stats.mean + 10 * stats.std, 200000.0)
    assert far - stats.mean > 2.33 * stats.std  # z(0.99) ~ 2.33 < 10
    x = observation_from_dict(
        jones_schema,
        {"income": far, "age": dists.numeric["age"].mean, "education": "graduate"},
    )
    assert check_plausibility(x, dists, 0.99) is False


def test_floored_level_implausible(jones_schema):
    rows = tuple(
        observation_from_dict(jones_schema, {"income": 40000 + i, "age": 40, "education": "graduate"})
        for i in range(20)
    )
    d = Dataset(schema=jones_schema, rows=rows)
    dists = fit_distributions(d, jones_schema)
    x = observation_from_dict(jones_schema, {"income": 40000, "age": 40, "education": "none"})
    assert check_plausibility(x, dists, 0.99) is False


# --- boundary line search -------------------------------------------------------

def brute_force_income_boundary(model, schema, x, step=1.0):
    """Independent oracle: scan the income axis on a $1 grid."""
    base = predict(model, x).label
    decl = schema.feature("income")
    best = None
    cur = x.value(schema, "income")
    for v in np.arange(decl.low, decl.high + step, step):
        if predict(model, x.replace(schema, "income", float(v))).label != base:
            if best is None or abs(v - cur) < abs(best - cur):
                best = float(v)
    return best


def test_line_search_against_dollar_grid_oracle(jones_schema, jones_model, jones_x):
    oracle = brute_force_income_boundary(jones_model, jones_schema, jones_x)
    assert oracle == 35000.0
    found = boundary_line_search(jones_model, jones_x, "income", tol=0.5)
    assert found is not None
    got = found.value(jones_schema, "income")
    assert abs(got - oracle) <= 0.5
    assert predict(jones_model, found).label != predict(jones_model, jones_x).label


def test_line_search_constant_model(jones_schema, jones_x):
    m = model_from_dict({"kind": "tree", "nodes": [{"leaf": 0.4}]}, jones_schema)
    for feature in ("income", "education"):
        assert boundary_line_search(m, jones_x, feature, tol=0.5) is None


def test_line_search_categorical_flip(adult_schema, adult_x, married_model):
    found = boundary_line_search(married_model, adult_x, "marital", tol=0.5)
    assert found is not None
    assert found.value(adult_schema, "marital") == "married"
    assert predict(married_model, found).probability == 0.57


def test_line_search_rejects_immutable(jones_schema, jones_model, jones_x):
    with pytest.raises(Exception):
        boundary_line_search(jones_model, jones_x, "age", tol=0.5)


# --- full search -----------------------------------------------------------------

def test_jones_search_top_result(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    results = search_counterfactuals(
        jones_model, jones_x, cfg_for(dists, metric="L1"), dists, budget=10000
    )
    assert results
    top = results[0]
    assert [c.feature for c in top.delta] == ["income"]
    assert abs(top.x_cf.value(jones_schema, "income") - 35000.0) <= 0.5
    assert abs(top.cost - 3000.0) <= 0.5
    assert top.sparsity == 1
    for r in results:
        assert all(c.feature != "age" for c in r.delta)


def test_search_empty_when_no_flip_possible(jones_schema, jones_dataset, jones_x):
    # education is the only mutable feature and the model ignores it
    s = FeatureSchema(
        features=(
            FeatureDecl("income", "numeric", low=0, high=200000, immutable=True),
            FeatureDecl("age", "numeric", low=18, high=100, immutable=True),
            FeatureDecl("education", "categorical", levels=("none", "graduate")),
        ),
        target_name="loan",
        positive_label="approved",
    )
    m = model_from_dict(
        {
            "kind": "tree",
            "nodes": [
                {"feature": "income", "op": "<", "value": 35000, "left": 1, "right": 2},
                {"leaf": 0.3},
                {"leaf": 0.7},
            ],
        },
        s,
    )
    d = Dataset(schema=s, rows=jones_dataset.rows)
    dists = fit_distributions(d, s)
    x = observation_from_dict(s, {"income": 32000, "age": 45, "education": "graduate"})
    assert search_counterfactuals(m, x, cfg_for(dists), dists, budget=2000) == []


def and_model(schema):
    """Positive iff income >= 34000 AND education == graduate."""
    grad_idx = 2 + schema.feature("education").levels.index("graduate")
    return model_from_dict(
        {
            "kind": "tree",
            "nodes": [
                {"feature": "income", "op": "<", "value": 34000, "left": 1, "right": 2},
                {"leaf": 0.3},
                {"feature": grad_idx, "op": "<", "value": 0.5, "left": 3, "right": 4},
                {"leaf": 0.3},
                {"leaf": 0.7},
            ],
        },
        schema,
    )


def test_two_feature_conjunction(jones_schema, jones_dataset):
    m = and_model(jones_schema)
    dists = fit_distributions(jones_dataset, jones_schema)
    x = observation_from_dict(jones_schema, {"income": 32000, "age": 45, "education": "none"})
    got = search_counterfactuals(m, x, cfg_for(dists, cap=2), dists, budget=10000)
    assert got and got[0].sparsity == 2
    changed = {c.feature for c in got[0].delta}
    assert changed == {"income", "education"}
    none_found = search_counterfactuals(m, x, cfg_for(dists, cap=1), dists, budget=10000)
    assert none_found == []


def test_costs_non_decreasing(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    results = search_counterfactuals(jones_model, jones_x, cfg_for(dists), dists, budget=10000)
    costs = [r.cost for r in results]
    assert costs == sorted(costs)


def test_budget_respected(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    counter = QueryCounter(1000)
    search_counterfactuals(
        jones_model, jones_x, cfg_for(dists), dists, budget=1000, counter=counter
    )
    assert counter.count <= 1000


# --- randomized property: constraints always hold -------------------------------

def random_instance(rng):
    kinds = rng.choice(["ordinal", "categorical", "numeric"], size=3)
    features = []
    for i, kind in enumerate(kinds):
        name = f"f{i}"
        if kind == "categorical":
            levels = tuple(f"l{j}" for j in range(int(rng.integers(2, 5))))
            features.append(FeatureDecl(name, "categorical", levels=levels))
        elif kind == "ordinal":
            lo = int(rng.integers(-3, 3))
            features.append(
                FeatureDecl(
                    name,
                    "ordinal",
                    low=lo,
                    high=lo + int(rng.integers(4, 13)),
                    monotonic=str(rng.choice(["none", "none", "increase_only", "decrease_only"])),
                )
            )
        else:
            lo = float(rng.uniform(-5, 0))
            features.append(FeatureDecl(name, "numeric", low=lo, high=lo + float(rng.uniform(2, 10))))
    # one feature may be immutable, but never all
    idx = int(rng.integers(0, 4))
    if idx < 3:
        f = features[idx]
        features[idx] = FeatureDecl(f.name, f.kind, low=f.low, high=f.high, levels=f.levels, immutable=True)
    schema = FeatureSchema(features=tuple(features), target_name="t", positive_label="p")

    rows = []
    for _ in range(40):
        vals = {}
        for f in schema.features:
            if f.kind == "categorical":
                vals[f.name] = f.levels[int(rng.integers(0, len(f.levels)))]
            elif f.kind == "ordinal":
                vals[f.name] = int(rng.integers(f.low, f.high + 1))
            else:
                vals[f.name] = float(rng.uniform(f.low, f.high))
        rows.append(observation_from_dict(schema, vals))
    dataset = Dataset(schema=schema, rows=tuple(rows))

    weights = rng.uniform(-2, 2, size=schema.encoded_dim)
    model = model_from_dict(
        {"kind": "logistic", "weights": list(weights), "bias": float(rng.uniform(-1, 1))},
        schema,
    )
    x = rows[int(rng.integers(0, len(rows)))]
    return schema, dataset, model, x


@pytest.mark.parametrize("seed", range(40))
def test_constraints_never_violated(seed):
    rng = np.random.default_rng(1000 + seed)
    schema, dataset, model, x = random_instance(rng)
    dists = fit_distributions(dataset, schema)
    cfg = CostConfig(metric="L1_MAD", mads=dists.mads(), sparsity_cap=2, plausibility_floor=0.95)
    results = search_counterfactuals(model, x, cfg, dists, budget=3000)
    base = predict(model, x).label
    for r in results:
        schema.validate(r.x_cf)  # range bounds
        assert check_feasibility(schema, x, r.x_cf)
        assert check_plausibility(r.x_cf, dists, 0.95)
        assert predict(model, r.x_cf).label != base
        assert r.sparsity == sum(1 for a, b in zip(x.values, r.x_cf.values) if a != b)
        assert r.sparsity <= 2


# --- exhaustive-enumeration oracle ------------------------------------------------

def enumerate_minimum(model, x, cfg, dists):
    """Brute force over full finite domains, subsets up to the sparsity cap."""
    s = model.schema
    base = predict(model, x).label
    domains = {}
    for f in s.features:
        if f.immutable:
            continue
        if f.kind == "categorical":
            domains[f.name] = list(f.levels)
        else:
            domains[f.name] = list(range(int(f.low), int(f.high) + 1))
    best = None
    names = list(domains)
    for r in range(1, cfg.sparsity_cap + 1):
        for subset in itertools.combinations(names, r):
            for combo in itertools.product(*(domains[n] for n in subset)):
                if any(v == x.value(s, n) for n, v in zip(subset, combo)):
                    continue
                x_c = x
                for n, v in zip(subset, combo):
                    x_c = x_c.replace(s, n, v)
                if not check_feasibility(s, x, x_c):
                    continue
                if not check_plausibility(x_c, dists, cfg.plausibility_floor):
                    continue
                if predict(model, x_c).label == base:
                    continue
                cost = delta_cost(s, x, x_c, cfg)
                if best is None or cost < best:
                    best = cost
    return best


def finite_instance(rng):
    features = []
    for i in range(3):
        if rng.random() < 0.5:
            levels = tuple(f"l{j}" for j in range(int(rng.integers(2, 5))))
            features.append(FeatureDecl(f"f{i}", "categorical", levels=levels))
        else:
            lo = int(rng.integers(-4, 2))
            features.append(FeatureDecl(f"f{i}", "ordinal", low=lo, high=lo + int(rng.integers(4, 13))))
    schema = FeatureSchema(features=tuple(features), target_name="t", positive_label="p")
    rows = []
    for _ in range(30):
        vals = {}
        for f in schema.features:
            if f.kind == "categorical":
                vals[f.name] = f.levels[int(rng.integers(0, len(f.levels)))]
            else:
                vals[f.name] = int(rng.integers(f.low, f.high + 1))
        rows.append(observation_from_dict(schema, vals))
    dataset = Dataset(schema=schema, rows=tuple(rows))
    weights = rng.uniform(-1.5, 1.5, size=schema.encoded_dim)
    model = model_from_dict(
        {"kind": "logistic", "weights": list(weights), "bias": float(rng.uniform(-0.5, 0.5))},
        schema,
    )
    x = rows[int(rng.integers(0, len(rows)))]
    return schema, dataset, model, x


@pytest.mark.parametrize("seed", range(15))
def test_search_matches_enumeration_oracle(seed):
    rng = np.random.default_rng(2000 + seed)
    schema, dataset, model, x = finite_instance(rng)
    dists = fit_distributions(dataset, schema)
    cfg = CostConfig(metric="L1_MAD", mads=dists.mads(), sparsity_cap=2, plausibility_floor=0.97)
    oracle = enumerate_minimum(model, x, cfg, dists)
    got = search_counterfactuals(model, x, cfg, dists, budget=10000)
    if oracle is None:
        assert got == []
    else:
        assert got, f"oracle found cost {oracle}, search found nothing"
        assert got[0].cost == pytest.approx(oracle, abs=1e-9)
