"""Synthetic neighbourhood generation around an observation.

Feature subsets of the center are resampled from distributions fitted to the
training data, labelled through the model, and kernel-weighted by distance.
All randomness flows through the counter-based Philox generator so a
neighbourhood is a pure function of (center, distributions, n, seed, width).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from . import schema as sc
from .model import BlackBoxModel, QueryCounter, counted_proba
from .schema import Dataset, FeatureSchema, Observation, encode_batch, encode_observation

# 1% of the declared range stands in for a degenerate (constant-column) spread.
DEGENERATE_SPREAD_FRACTION = 0.01

# Minority class share below which the neighbourhood is rebalanced / flagged.
MIN_CLASS_FRACTION = 0.05
MAX_REBALANCE_BATCHES = 4

# Stream ids for Philox.jumped(); keeps sub-draws of one seed independent.
STREAM_NEIGHBOURHOOD = 0
STREAM_CERTIFICATION = 1


@dataclass(frozen=True)
class NumericStats:
    mean: float
    std: float          # sample std, n-1 denominator; 0 only for constant columns
    perturb_std: float  # std with the degenerate-column substitution applied
    mad: float          # median absolute deviation, same substitution


@dataclass(frozen=True)
class CategoricalStats:
    levels: tuple[str, ...]
    frequencies: tuple[float, ...]  # raw empirical frequencies, sum to 1
    draw_probs: tuple[float, ...]   # smoothed (count+1)/(n+L); floor 1/(n+L) for unseen levels


@dataclass(frozen=True)
class PerturbationDistributions:
    """Per-feature sampling distributions fitted from a training dataset."""

    schema: FeatureSchema
    numeric: dict[str, NumericStats]
    categorical: dict[str, CategoricalStats]
    n_rows: int

    def mads(self) -> tuple[float, ...]:
        """Per-feature scale for cost metrics: MAD for numeric/ordinal, 1 for categorical."""
        out = []
        for f in self.schema.features:
            out.append(self.numeric[f.name].mad if f.kind != sc.CATEGORICAL else 1.0)
        return tuple(out)

    def encoded_scales(self) -> np.ndarray:
        """Per encoded dimension scale for MAD-normalized distances.

        Indicator dimensions use unit scale; numeric/ordinal use the feature MAD.
        """
        scales = np.ones(self.schema.encoded_dim, dtype=np.float64)
        for f, off in zip(self.schema.features, self.schema.encoded_offsets()):
            if f.kind != sc.CATEGORICAL:
                scales[off] = self.numeric[f.name].mad
        return scales


def _mad(values: np.ndarray) -> float:
    med = float(np.median(values))
    return float(np.median(np.abs(values - med)))


def fit_distributions(d: Dataset, s: FeatureSchema) -> PerturbationDistributions:
    """Fit per-feature parametric sampling distributions from the dataset.

    Numeric/ordinal features get sample mean and sample standard deviation
    (n-1 denominator); categorical features get empirical level frequencies,
    smoothed for drawing so unseen levels keep probability 1/(n+L).
    """
    if len(d) == 0:
        raise sc.ValidationError("cannot fit distributions on an empty dataset")
    numeric: dict[str, NumericStats] = {}
    categorical: dict[str, CategoricalStats] = {}
    n = len(d)
    for f in s.features:
        col = d.column(f.name)
        if f.kind == sc.CATEGORICAL:
            counts = np.array([sum(1 for v in col if v == lvl) for lvl in f.levels], dtype=np.float64)
            freqs = counts / n
            draw = (counts + 1.0) / (n + len(f.levels))
            categorical[f.name] = CategoricalStats(f.levels, tuple(freqs), tuple(draw))
        else:
            arr = np.asarray(col, dtype=np.float64)
            mean = float(arr.mean())
            std = float(arr.std(ddof=1)) if n > 1 else 0.0
            fallback = DEGENERATE_SPREAD_FRACTION * (f.high - f.low)
            numeric[f.name] = NumericStats(
                mean=mean,
                std=std,
                perturb_std=std if std > 0.0 else fallback,
                mad=_mad(arr) if _mad(arr) > 0.0 else fallback,
            )
    return PerturbationDistributions(schema=s, numeric=numeric, categorical=categorical, n_rows=n)


def kernel_weight(distance: float, width: float) -> float:
    """Gaussian kernel exp(-d^2 / width^2); 1 at the center, strictly decreasing."""
    if width <= 0.0:
        raise ValueError("kernel width must be positive")
    if distance < 0.0:
        raise ValueError("distance must be non-negative")
    return math.exp(-(distance * distance) / (width * width))


def mad_distance(e_a: np.ndarray, e_b: np.ndarray, scales: np.ndarray) -> float:
    """MAD-normalized L2 distance between two encoded observations."""
    diff = (e_a - e_b) / scales
    return float(np.sqrt(np.dot(diff, diff)))


@dataclass(frozen=True)
class Neighbourhood:
    """Labelled, weighted synthetic samples around a center observation.

    The center is always included as the last sample with weight 1 (the
    kernel maximum). ``balanced`` is False when both classes could not be
    represented at the minimum fraction within the rebalance budget.
    """

    schema: FeatureSchema
    center: Observation
    observations: tuple[Observation, ...]
    encoded: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    seed: int
    kernel_width: float
    balanced: bool

    def __len__(self) -> int:
        return len(self.observations)


def _perturb_rows(rng: Generator, x: Observation, dists: PerturbationDistributions,
                  count: int) -> list[Observation]:
    """Resample a uniformly random non-empty feature subset of x, count times."""
    s = dists.schema
    p = len(s.features)
    rows = []
    for _ in range(count):
        mask = rng.integers(0, 2, size=p)
        while not mask.any():
            mask = rng.integers(0, 2, size=p)
        values = list(x.values)
        for j, f in enumerate(s.features):
            if not mask[j]:
                continue
            if f.kind == sc.CATEGORICAL:
                stats = dists.categorical[f.name]
                values[j] = f.levels[rng.choice(len(f.levels), p=np.asarray(stats.draw_probs))]
            else:
                stats = dists.numeric[f.name]
                v = rng.normal(stats.mean, stats.perturb_std)
                v = min(max(v, f.low), f.high)
                values[j] = float(v) if f.kind == sc.NUMERIC else int(round(v))
        rows.append(Observation(tuple(values)))
    return rows


def generate_neighbourhood(m: BlackBoxModel, x: Observation, dists: PerturbationDistributions,
                           n: int, seed: int, kernel_width: float,
                           counter: QueryCounter | None = None) -> Neighbourhood:
    """Generate n synthetic samples around x, labelled by m and kernel-weighted.

    If either class falls below MIN_CLASS_FRACTION, up to four further batches
    are drawn and their minority-class rows replace the lowest-weight majority
    rows, keeping the sample count at exactly n + 1 (the center included).
    """
    if n < 100:
        raise ValueError("neighbourhood size n must be >= 100")
    s = dists.schema
    s.validate(x)
    proba = counted_proba(m, counter)
    rng = Generator(Philox(key=seed).jumped(STREAM_NEIGHBOURHOOD))
    scales = dists.encoded_scales()
    e_center = encode_observation(s, x)

    rows = _perturb_rows(rng, x, dists, n)
    E = encode_batch(s, rows)
    y = proba(E)

    threshold = s.threshold
    positive = y >= threshold
    n_pos = int(positive.sum())
    minority_is_positive = n_pos <= n - n_pos
    balanced = min(n_pos, n - n_pos) >= MIN_CLASS_FRACTION * n

    batches = 0
    while not balanced and batches < MAX_REBALANCE_BATCHES:
        batches += 1
        extra = _perturb_rows(rng, x, dists, n)
        E_extra = encode_batch(s, extra)
        y_extra = proba(E_extra)
        cross = (y_extra >= threshold) == minority_is_positive
        if cross.any():
            dist_cur = np.sqrt((((E - e_center) / scales) ** 2).sum(axis=1))
            majority = (y >= threshold) != minority_is_positive
            # replace the farthest majority rows, deterministically
            replace_order = sorted(np.flatnonzero(majority), key=lambda i: (-dist_cur[i], i))
            incoming = list(np.flatnonzero(cross))
            need = math.ceil(MIN_CLASS_FRACTION * n) - int(((y >= threshold) == minority_is_positive).sum())
            for slot, src in zip(replace_order[: max(need, 0)], incoming):
                rows[slot] = extra[src]
                E[slot] = E_extra[src]
                y[slot] = y_extra[src]
        n_pos = int((y >= threshold).sum())
        balanced = min(n_pos, n - n_pos) >= MIN_CLASS_FRACTION * n

    dist = np.sqrt((((E - e_center) / scales) ** 2).sum(axis=1))
    w = np.exp(-(dist**2) / (kernel_width**2))

    y_center = proba(e_center.reshape(1, -1))
    observations = tuple(rows) + (x,)
    encoded = np.vstack([E, e_center])
    y_all = np.concatenate([y, y_center])
    w_all = np.concatenate([w, [1.0]])
    return Neighbourhood(
        schema=s,
        center=x,
        observations=observations,
        encoded=encoded,
        y=y_all,
        weights=w_all,
        seed=seed,
        kernel_width=kernel_width,
        balanced=balanced,
    )


def certification_probes(x: Observation, dists: PerturbationDistributions,
                         count: int, seed: int) -> list[Observation]:
    """Fresh out-of-sample probe points around x, on an independent stream."""
    rng = Generator(Philox(key=seed).jumped(STREAM_CERTIFICATION))
    return _perturb_rows(rng, x, dists, count)
