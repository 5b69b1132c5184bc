"""Minimum-cost counterfactual search under feasibility and plausibility constraints.

Finds deltas that flip the model's class: a per-feature boundary line search
(coarse grid, then bisection) plus a bounded beam search over feature subsets
up to the sparsity cap. Returned instances are re-verified against the model
and ordered by (cost, sparsity, schema feature order).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import schema as sc
from .model import BlackBoxModel, QueryCounter, class_of, counted_proba
from .sampling import PerturbationDistributions
from .schema import FeatureSchema, Observation, encode_batch, encode_observation

L1 = "L1"
L2 = "L2"
L1_MAD = "L1_MAD"
METRICS = (L1, L2, L1_MAD)

LINE_SEARCH_GRID = 256
BEAM_WIDTH = 8
MULTI_FEATURE_GRID = 16


@dataclass(frozen=True)
class CostConfig:
    """Cost metric parameters plus the sparsity and plausibility constraints."""

    metric: str
    mads: tuple[float, ...]
    sparsity_cap: int = 2
    plausibility_floor: float = 0.99

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown cost metric {self.metric!r}")
        if any(m <= 0.0 for m in self.mads):
            raise ValueError("all MAD scales must be positive")
        if self.sparsity_cap < 1:
            raise ValueError("sparsity_cap must be >= 1")
        if not (0.0 <= self.plausibility_floor <= 1.0):
            raise ValueError("plausibility_floor must lie in [0, 1]")
        object.__setattr__(self, "mads", tuple(float(m) for m in self.mads))


@dataclass(frozen=True)
class FeatureChange:
    feature: str
    before: object
    after: object


@dataclass(frozen=True)
class CounterfactualInstance:
    """An alternative observation on the other side of the decision boundary."""

    x_cf: Observation
    delta: tuple[FeatureChange, ...]
    cost: float
    sparsity: int
    y_actual: float
    feasible: bool
    plausible: bool


def changed_features(schema: FeatureSchema, x: Observation, x_cf: Observation) -> tuple[FeatureChange, ...]:
    out = []
    for f, before, after in zip(schema.features, x.values, x_cf.values):
        if before != after:
            out.append(FeatureChange(f.name, before, after))
    return tuple(out)


def delta_cost(schema: FeatureSchema, x: Observation, x_cf: Observation, cfg: CostConfig) -> float:
    """Cost of the delta from x to x_cf under the configured metric.

    Numeric and ordinal deltas are measured on encoded values; a changed
    categorical feature contributes one unit regardless of metric.
    """
    schema.validate(x)
    schema.validate(x_cf)
    terms = []
    for i, f in enumerate(schema.features):
        before, after = x.values[i], x_cf.values[i]
        if f.kind == sc.CATEGORICAL:
            terms.append(0.0 if before == after else 1.0)
        else:
            d = abs(float(after) - float(before))
            terms.append(d / cfg.mads[i] if cfg.metric == L1_MAD else d)
    if cfg.metric == L2:
        return math.sqrt(sum(t * t for t in terms))
    return float(sum(terms))


def check_feasibility(schema: FeatureSchema, x: Observation, x_cf: Observation) -> bool:
    """True iff no immutable feature changed and monotonic directions are respected."""
    schema.validate(x)
    schema.validate(x_cf)
    for f, before, after in zip(schema.features, x.values, x_cf.values):
        if before == after:
            continue
        if f.immutable:
            return False
        if f.monotonic == sc.MONOTONIC_UP and float(after) < float(before):
            return False
        if f.monotonic == sc.MONOTONIC_DOWN and float(after) > float(before):
            return False
    return True


def plausibility_z(theta: float) -> float:
    """Half-width of the central plausibility band in standard deviations."""
    if not (0.0 <= theta <= 1.0):
        raise ValueError("theta must lie in [0, 1]")
    return max(float(norm.ppf(theta)), 0.0)


def check_plausibility(x_cf: Observation, dists: PerturbationDistributions, theta: float) -> bool:
    """True iff every value of x_cf sits in the high-density part of the data.

    Numeric/ordinal values must satisfy |v - mean| <= z(theta) * std; a
    categorical level must have been observed in the training data (its raw
    frequency is above the smoothing floor).
    """
    z = plausibility_z(theta)
    s = dists.schema
    s.validate(x_cf)
    for i, f in enumerate(s.features):
        v = x_cf.values[i]
        if f.kind == sc.CATEGORICAL:
            stats = dists.categorical[f.name]
            if stats.frequencies[stats.levels.index(v)] <= 0.0:
                return False
        else:
            stats = dists.numeric[f.name]
            if abs(float(v) - stats.mean) > z * stats.std:
                return False
    return True


def _plausible_interval(decl, stats, theta: float) -> tuple[float, float] | None:
    z = plausibility_z(theta)
    lo = max(decl.low, stats.mean - z * stats.std)
    hi = min(decl.high, stats.mean + z * stats.std)
    return (lo, hi) if lo <= hi else None


def _monotonic_interval(decl, current: float) -> tuple[float, float]:
    if decl.monotonic == sc.MONOTONIC_UP:
        return (current, decl.high)
    if decl.monotonic == sc.MONOTONIC_DOWN:
        return (decl.low, current)
    return (decl.low, decl.high)


def _numeric_grid(lo: float, hi: float, points: int) -> np.ndarray:
    return np.linspace(lo, hi, points)


def _ordinal_grid(lo: float, hi: float, points: int) -> list[int]:
    span = int(hi) - int(lo) + 1
    if span <= points:
        return list(range(int(lo), int(hi) + 1))
    vals = np.unique(np.round(np.linspace(lo, hi, points)).astype(int))
    return [int(v) for v in vals]


class _Probe:
    """Batched, budget-capped model evaluation of single observations."""

    def __init__(self, m: BlackBoxModel, counter: QueryCounter):
        self.schema = m.schema
        self.proba = counted_proba(m, counter)
        self.counter = counter

    def eval_many(self, rows: list[Observation]) -> tuple[list[Observation], np.ndarray]:
        keep = rows[: self.counter.remaining]
        if not keep:
            return [], np.empty(0)
        return keep, self.proba(encode_batch(self.schema, keep))

    def eval_one(self, x: Observation) -> float | None:
        if self.counter.remaining < 1:
            return None
        return float(self.proba(encode_observation(self.schema, x).reshape(1, -1))[0])


def _feature_flip_search(probe: _Probe, x: Observation, feature: str, tol: float,
                         base_class: str, interval: tuple[float, float] | None,
                         allowed_levels: tuple[str, ...] | None
                         ) -> tuple[Observation | None, list, np.ndarray]:
    """Nearest single-feature class flip within an allowed region.

    Returns (flip observation or None, probed values, probed outputs); the
    probed values feed the beam search's subset scoring.
    """
    s = probe.schema
    decl = s.feature(feature)
    threshold = s.threshold
    pos = s.positive_label
    cur = x.values[s.index(feature)]

    if decl.kind == sc.CATEGORICAL:
        levels = [l for l in (allowed_levels if allowed_levels is not None else decl.levels) if l != cur]
        rows = [x.replace(s, feature, l) for l in levels]
        rows, y = probe.eval_many(rows)
        for obs, p in zip(rows, y):
            if class_of(float(p), threshold, pos) != base_class:
                return obs, levels[: len(rows)], y
        return None, levels[: len(rows)], y

    lo, hi = interval if interval is not None else (decl.low, decl.high)
    if lo > hi:
        return None, [], np.empty(0)

    if decl.kind == sc.ORDINAL:
        vals = [v for v in _ordinal_grid(lo, hi, LINE_SEARCH_GRID) if v != int(cur)]
        vals.sort(key=lambda v: (abs(v - cur), v))
        rows = [x.replace(s, feature, v) for v in vals]
        rows, y = probe.eval_many(rows)
        for obs, v, p in zip(rows, vals, y):
            if class_of(float(p), threshold, pos) != base_class:
                return obs, vals[: len(rows)], y
        return None, vals[: len(rows)], y

    grid = _numeric_grid(lo, hi, LINE_SEARCH_GRID)
    rows = [x.replace(s, feature, v) for v in grid]
    rows, y = probe.eval_many(rows)
    grid = grid[: len(rows)]
    if len(grid) == 0:
        return None, [], np.empty(0)
    flips = np.array(
        [class_of(float(p), threshold, pos) != base_class for p in y], dtype=bool
    )
    if not flips.any():
        return None, list(grid), y

    flip_idx = min(np.flatnonzero(flips), key=lambda i: (abs(grid[i] - cur), grid[i]))
    g_flip = float(grid[flip_idx])
    step = 1 if g_flip < cur else -1
    neighbor_idx = flip_idx + step
    if 0 <= neighbor_idx < len(grid) and min(g_flip, cur) <= grid[neighbor_idx] <= max(g_flip, cur):
        a = float(grid[neighbor_idx])
    else:
        a = float(cur)
    a = min(max(a, lo), hi)

    p_a = probe.eval_one(x.replace(s, feature, a))
    if p_a is not None and class_of(p_a, threshold, pos) != base_class:
        return x.replace(s, feature, a), list(grid), y

    b = g_flip
    while abs(b - a) > tol:
        mid = 0.5 * (a + b)
        p_mid = probe.eval_one(x.replace(s, feature, mid))
        if p_mid is None:
            break
        if class_of(p_mid, threshold, pos) != base_class:
            b = mid
        else:
            a = mid
    return x.replace(s, feature, b), list(grid), y


def boundary_line_search(m: BlackBoxModel, x: Observation, feature: str, tol: float,
                         counter: QueryCounter | None = None) -> Observation | None:
    """Nearest class-flipping value of one feature, all others held at x.

    Numeric features are scanned on a 256-point grid over the declared range
    and the nearest flip is refined by bisection to within ``tol``; ordinal
    features are scanned by increasing distance from x's value; categorical
    features are scanned in declared level order. Returns None when no value
    of the feature flips the class.
    """
    if m.schema.feature(feature).immutable:
        raise sc.ValidationError(f"feature {feature!r} is immutable")
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    probe = _Probe(m, counter if counter is not None else QueryCounter())
    p0 = probe.eval_one(x)
    if p0 is None:
        return None
    base_class = class_of(p0, m.schema.threshold, m.schema.positive_label)
    result, _, _ = _feature_flip_search(probe, x, feature, tol, base_class, None, None)
    return result


def _multi_candidates(decl, stats_n, stats_c, cur, theta: float,
                      refined: float | None) -> list:
    """Per-feature candidate values for the multi-feature beam search."""
    if decl.kind == sc.CATEGORICAL:
        return [
            l
            for l, fr in zip(stats_c.levels, stats_c.frequencies)
            if fr > 0.0 and l != cur
        ]
    interval = _plausible_interval(decl, stats_n, theta)
    if interval is None:
        return []
    lo = max(interval[0], _monotonic_interval(decl, float(cur))[0])
    hi = min(interval[1], _monotonic_interval(decl, float(cur))[1])
    if lo > hi:
        return []
    if decl.kind == sc.ORDINAL:
        return [v for v in _ordinal_grid(math.ceil(lo), math.floor(hi), MULTI_FEATURE_GRID) if v != cur]
    vals = [float(v) for v in _numeric_grid(lo, hi, MULTI_FEATURE_GRID) if v != cur]
    if refined is not None and lo <= refined <= hi and refined not in vals:
        vals.append(refined)
    return vals


def search_counterfactuals(m: BlackBoxModel, x: Observation, cfg: CostConfig,
                           dists: PerturbationDistributions, budget: int,
                           line_tol: dict[str, float] | None = None,
                           counter: QueryCounter | None = None) -> list[CounterfactualInstance]:
    """Feasible, plausible, class-flipping instances in ascending cost order.

    Per-feature boundary line searches (restricted upfront to the feasible and
    plausible region of each feature) seed the result set; feature subsets of
    size 2..sparsity_cap are then explored by beam search (width 8) over
    per-feature candidate grids. Every returned instance is re-verified with a
    fresh model call, and total model queries never exceed ``budget``.
    """
    if budget < 1000:
        raise ValueError("budget must be >= 1000")
    s = m.schema
    s.validate(x)
    if counter is None:
        counter = QueryCounter(budget)
    elif counter.budget is None:
        counter.budget = budget
    probe = _Probe(m, counter)
    theta = cfg.plausibility_floor

    p0 = probe.eval_one(x)
    if p0 is None:
        return []
    base_class = class_of(p0, s.threshold, s.positive_label)

    mutable = [f for f in s.features if not f.immutable]
    candidates: list[Observation] = []
    refined_value: dict[str, float] = {}
    feature_score: dict[str, float] = {}

    for decl in mutable:
        cur = x.values[s.index(decl.name)]
        tol = (line_tol or {}).get(decl.name, _default_tol(decl))
        if decl.kind == sc.CATEGORICAL:
            stats = dists.categorical[decl.name]
            allowed = tuple(l for l, fr in zip(stats.levels, stats.frequencies) if fr > 0.0)
            flip, vals, y = _feature_flip_search(probe, x, decl.name, tol, base_class, None, allowed)
        else:
            stats = dists.numeric[decl.name]
            band = _plausible_interval(decl, stats, theta)
            if band is None:
                feature_score[decl.name] = math.inf
                continue
            mono = _monotonic_interval(decl, float(cur))
            interval = (max(band[0], mono[0]), min(band[1], mono[1]))
            flip, vals, y = _feature_flip_search(probe, x, decl.name, tol, base_class, interval, None)
            if flip is not None and decl.kind == sc.NUMERIC:
                refined_value[decl.name] = float(flip.values[s.index(decl.name)])
        if flip is not None:
            candidates.append(flip)
        feature_score[decl.name] = (
            0.0 if flip is not None
            else float(np.min(np.abs(y - s.threshold))) if len(y) else math.inf
        )

    if cfg.sparsity_cap >= 2 and len(mutable) >= 2:
        values_of = {
            decl.name: _multi_candidates(
                decl,
                dists.numeric.get(decl.name),
                dists.categorical.get(decl.name),
                x.values[s.index(decl.name)],
                theta,
                refined_value.get(decl.name),
            )
            for decl in mutable
        }
        names = [d.name for d in mutable if values_of[d.name]]
        beam = sorted(
            ([n] for n in names),
            key=lambda sub: (feature_score[sub[0]], s.index(sub[0])),
        )[:BEAM_WIDTH]

        for _size in range(2, cfg.sparsity_cap + 1):
            expansions: list[tuple[str, ...]] = []
            seen: set[frozenset] = set()
            for sub in beam:
                for g in names:
                    if g in sub:
                        continue
                    new = tuple(sorted(list(sub) + [g], key=s.index))
                    if frozenset(new) not in seen:
                        seen.add(frozenset(new))
                        expansions.append(new)
            scored: list[tuple[float, tuple[str, ...]]] = []
            for sub in expansions:
                combos = list(itertools.product(*(values_of[f] for f in sub)))
                rows = [_with_values(s, x, sub, combo) for combo in combos]
                rows, y = probe.eval_many(rows)
                best = math.inf
                for obs, p in zip(rows, y):
                    gap = abs(float(p) - s.threshold)
                    best = min(best, gap)
                    if class_of(float(p), s.threshold, s.positive_label) != base_class:
                        candidates.append(obs)
                scored.append((best, sub))
            scored.sort(key=lambda t: (t[0], tuple(s.index(f) for f in t[1])))
            beam = [list(sub) for _, sub in scored[:BEAM_WIDTH]]
            if counter.remaining == 0:
                break

    return _finalize(probe, s, x, cfg, dists, base_class, candidates)


def _default_tol(decl) -> float:
    if decl.kind == sc.NUMERIC:
        return max((decl.high - decl.low) * 1e-6, 1e-9)
    return 0.5


def _with_values(s: FeatureSchema, x: Observation, features, values) -> Observation:
    vals = list(x.values)
    for name, v in zip(features, values):
        vals[s.index(name)] = s.feature(name).coerce(v)
    return Observation(tuple(vals))


def _sort_key(s: FeatureSchema, x: Observation, inst: CounterfactualInstance):
    idx = tuple(s.index(c.feature) for c in inst.delta)
    return (inst.cost, inst.sparsity, idx, tuple(repr(v) for v in inst.x_cf.values))


def _finalize(probe: _Probe, s: FeatureSchema, x: Observation, cfg: CostConfig,
              dists: PerturbationDistributions, base_class: str,
              candidates: list[Observation]) -> list[CounterfactualInstance]:
    seen: set[tuple] = {tuple(x.values)}
    unique: list[Observation] = []
    for obs in candidates:
        key = tuple(obs.values)
        if key not in seen:
            seen.add(key)
            unique.append(obs)

    # cheapest candidates get verified first if the budget runs short
    provisional = sorted(
        unique, key=lambda obs: (delta_cost(s, x, obs, cfg), tuple(repr(v) for v in obs.values))
    )
    out: list[CounterfactualInstance] = []
    for obs in provisional:
        if not check_feasibility(s, x, obs):
            continue
        if not check_plausibility(obs, dists, cfg.plausibility_floor):
            continue
        delta = changed_features(s, x, obs)
        if not delta or len(delta) > cfg.sparsity_cap:
            continue
        y_actual = probe.eval_one(obs)
        if y_actual is None:
            break
        if class_of(y_actual, s.threshold, s.positive_label) == base_class:
            continue
        out.append(
            CounterfactualInstance(
                x_cf=obs,
                delta=delta,
                cost=delta_cost(s, x, obs, cfg),
                sparsity=len(delta),
                y_actual=y_actual,
                feasible=True,
                plausible=True,
            )
        )
    out.sort(key=lambda inst: _sort_key(s, x, inst))
    return out
