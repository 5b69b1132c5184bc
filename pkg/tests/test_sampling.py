import math

import numpy as np
import pytest

from whybox.model import model_from_dict, predict
from whybox.sampling import (
    PerturbationDistributions,
    fit_distributions,
    generate_neighbourhood,
    kernel_weight,
    mad_distance,
)
from whybox.schema import (
    Dataset,
    FeatureDecl,
    FeatureSchema,
    ValidationError,
    encode_observation,
    observation_from_dict,
)


def small_schema():
    return FeatureSchema(
        features=(
            FeatureDecl("a", "numeric", low=-100, high=100),
            FeatureDecl("c", "categorical", levels=("x", "y", "z")),
        ),
        target_name="t",
        positive_label="p",
    )


def dataset_of(schema, rows):
    return Dataset(schema=schema, rows=tuple(observation_from_dict(schema, r) for r in rows))


def test_fit_numeric_mean_std():
    s = small_schema()
    d = dataset_of(
        s, [{"a": 1, "c": "x"}, {"a": 2, "c": "x"}, {"a": 3, "c": "y"}]
    )
    dists = fit_distributions(d, s)
    assert dists.numeric["a"].mean == pytest.approx(2.0)
    assert dists.numeric["a"].std == pytest.approx(1.0)  # n-1 denominator


def test_fit_categorical_frequencies_and_floor():
    s = small_schema()
    d = dataset_of(s, [{"a": 0, "c": "x"}, {"a": 0, "c": "x"}, {"a": 0, "c": "y"}])
    dists = fit_distributions(d, s)
    stats = dists.categorical["c"]
    assert stats.frequencies == pytest.approx((2 / 3, 1 / 3, 0.0))
    assert abs(sum(stats.frequencies) - 1.0) < 1e-9
    # unseen level stays drawable at exactly 1/(n+L)
    n, L = 3, 3
    assert stats.draw_probs[2] == pytest.approx(1 / (n + L))
    assert abs(sum(stats.draw_probs) - 1.0) < 1e-9


def test_fit_constant_column_degenerate():
    s = small_schema()
    d = dataset_of(s, [{"a": 5, "c": "x"}, {"a": 5, "c": "y"}, {"a": 5, "c": "x"}])
    dists = fit_distributions(d, s)
    assert dists.numeric["a"].mean == 5.0
    assert dists.numeric["a"].std == 0.0
    # substitution: 1% of range keeps the feature perturbable
    assert dists.numeric["a"].perturb_std == pytest.approx(0.01 * 200)
    assert dists.numeric["a"].mad == pytest.approx(0.01 * 200)


def test_fit_rejects_empty():
    s = small_schema()
    with pytest.raises(Exception):
        Dataset(schema=s, rows=())


def test_kernel_values():
    assert kernel_weight(0.0, 2.5) == 1.0
    assert kernel_weight(1.0, 1.0) == pytest.approx(math.exp(-1), abs=1e-9)
    assert kernel_weight(2.0, 1.0) == pytest.approx(math.exp(-4), abs=1e-9)
    with pytest.raises(ValueError):
        kernel_weight(1.0, 0.0)
    with pytest.raises(ValueError):
        kernel_weight(-1.0, 1.0)


def test_kernel_strictly_decreasing():
    values = [kernel_weight(d, 1.5) for d in np.linspace(0, 5, 50)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_neighbourhood_count_contract(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    nbhd = generate_neighbourhood(jones_model, jones_x, dists, 1000, seed=4, kernel_width=1.0)
    assert len(nbhd) == 1001
    assert nbhd.observations[-1] == jones_x
    assert nbhd.weights[-1] == 1.0


def test_neighbourhood_determinism(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    a = generate_neighbourhood(jones_model, jones_x, dists, 200, seed=9, kernel_width=1.0)
    b = generate_neighbourhood(jones_model, jones_x, dists, 200, seed=9, kernel_width=1.0)
    assert a.observations == b.observations
    assert np.array_equal(a.y, b.y) and np.array_equal(a.weights, b.weights)
    c = generate_neighbourhood(jones_model, jones_x, dists, 200, seed=10, kernel_width=1.0)
    assert a.observations != c.observations


def test_neighbourhood_requires_minimum_size(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    with pytest.raises(ValueError):
        generate_neighbourhood(jones_model, jones_x, dists, 99, seed=0, kernel_width=1.0)


def test_constant_model_propagates(jones_schema, jones_dataset, jones_x):
    m = model_from_dict({"kind": "tree", "nodes": [{"leaf": 0.5}]}, jones_schema)
    dists = fit_distributions(jones_dataset, jones_schema)
    nbhd = generate_neighbourhood(m, jones_x, dists, 150, seed=1, kernel_width=1.0)
    assert np.all(nbhd.y == 0.5)


def test_label_fidelity(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    nbhd = generate_neighbourhood(jones_model, jones_x, dists, 300, seed=2, kernel_width=1.0)
    rng = np.random.default_rng(0)
    for i in rng.choice(len(nbhd), size=100, replace=False):
        again = predict(jones_model, nbhd.observations[i]).probability
        assert again == nbhd.y[i]


def test_weights_non_increasing_in_distance(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    nbhd = generate_neighbourhood(jones_model, jones_x, dists, 300, seed=3, kernel_width=1.0)
    scales = dists.encoded_scales()
    e0 = encode_observation(jones_schema, jones_x)
    d = np.array([mad_distance(row, e0, scales) for row in nbhd.encoded])
    order = np.argsort(d)
    w_sorted = nbhd.weights[order]
    assert np.all(np.diff(w_sorted) <= 1e-15)
    assert nbhd.weights.max() == nbhd.weights[-1] == 1.0


def test_locality_shrinks_with_std(jones_schema, jones_dataset, jones_model, jones_x):
    dists = fit_distributions(jones_dataset, jones_schema)
    shrunk_numeric = {
        k: type(v)(mean=v.mean, std=v.std, perturb_std=v.perturb_std * 0.1, mad=v.mad)
        for k, v in dists.numeric.items()
    }
    shrunk = PerturbationDistributions(
        schema=dists.schema, numeric=shrunk_numeric, categorical=dists.categorical, n_rows=dists.n_rows
    )
    scales = dists.encoded_scales()
    e0 = encode_observation(jones_schema, jones_x)

    def mean_distance(d_):
        nbhd = generate_neighbourhood(jones_model, jones_x, d_, 400, seed=6, kernel_width=1.0)
        return np.mean([mad_distance(row, e0, scales) for row in nbhd.encoded[:-1]])

    assert mean_distance(shrunk) < mean_distance(dists)


def test_class_balance_near_boundary(jones_schema, jones_dataset, jones_x):
    # boundary at 41000 is within one std (15000) of the center's income
    m = model_from_dict(
        {
            "kind": "tree",
            "nodes": [
                {"feature": "income", "op": "<", "value": 41000, "left": 1, "right": 2},
                {"leaf": 0.2},
                {"leaf": 0.8},
            ],
        },
        jones_schema,
    )
    dists = fit_distributions(jones_dataset, jones_schema)
    for seed in range(10):
        nbhd = generate_neighbourhood(m, jones_x, dists, 200, seed=seed, kernel_width=1.0)
        frac_pos = float(np.mean(nbhd.y >= 0.5))
        assert nbhd.balanced
        assert 0.05 <= frac_pos <= 0.95


def test_unbalanced_flag_on_one_sided_region(jones_schema, jones_dataset, jones_x):
    # unreachable boundary: class never flips, so balance is impossible
    m = model_from_dict({"kind": "tree", "nodes": [{"leaf": 0.9}]}, jones_schema)
    dists = fit_distributions(jones_dataset, jones_schema)
    nbhd = generate_neighbourhood(m, jones_x, dists, 120, seed=0, kernel_width=1.0)
    assert not nbhd.balanced
    assert len(nbhd) == 121  # count contract holds regardless
