"""Bagged regression trees and the stacking pipeline over archived forecasts.

The stacking model readjusts the three constituent forecasts of weekly
incident deaths using recent-trend features read from the snapshot at each
row's own origin. One forest is trained per horizon, on rows pooled across
locations from the two most recent origins whose targets have resolved: for
horizon k and a current origin T, those are T-7(k+1) and T-7k.

Feature vector (fixed arity 6):

    [f1, f2, f3,                      constituent k-week incident-death points
     cum_deaths_at_origin,            cumulative deaths known at the row origin
     inc_deaths_origin_week,          incident deaths over the week ending there
     inc_deaths_prev_week]            and over the week before that

Trees are fitted greedily: thresholds are midpoints between consecutive
sorted distinct feature values, the split minimizing the children's summed
squared error wins, ties resolve to the lowest (feature index, threshold),
and recursion stops at min_leaf rows or zero target variance. Each tree owns
a seeded bootstrap resample, so (rows, hyper, seed) reproduce bit-identical
forests.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .archive import ArchiveIncomplete, ForecastArchive
from .dates import ONE_WEEK
from .forecast import (
    CATEGORY_AIML,
    ForecastSet,
    ForecastValue,
    KIND_INCIDENT,
    MethodDescriptor,
    SIGNAL_DEATHS,
    TargetSpec,
)
from .store import (
    MissingSeries,
    SIGNAL_CUM_DEATHS,
    SnapshotView,
    Store,
    UnresolvedTarget,
    incident,
)

ENSEMBLE_METHOD_ID = "EpiBench-RF-ensemble"
MEAN_ENSEMBLE_METHOD_ID = "EpiBench-mean-ensemble"

FEATURE_COUNT = 6
FOREST_FORMAT_VERSION = 1


class EnsembleError(Exception):
    """Stacking or forest-fitting failure."""


@dataclass(frozen=True)
class ForestHyper:
    """Forest hyperparameters; the paper fixes only the tree count."""

    tree_count: int = 100
    min_leaf: int = 5
    features_per_split: int = 2
    bootstrap: bool = True

    def __post_init__(self):
        if self.tree_count < 1 or self.min_leaf < 1 or self.features_per_split < 1:
            raise ValueError("forest hyperparameters must be positive")


@dataclass(frozen=True)
class FeatureRow:
    """One training/prediction row of the stacking model."""

    x: tuple[float, ...]
    y: float | None
    location: str
    origin: dt.date
    horizon: int

    def __post_init__(self):
        if len(self.x) != FEATURE_COUNT:
            raise EnsembleError(f"feature vector arity {len(self.x)} != {FEATURE_COUNT}")
        if not all(np.isfinite(self.x)):
            raise EnsembleError(f"non-finite feature for {self.location} @ {self.origin}")


@dataclass
class _Node:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "_Node":
        if "feature" not in raw:
            return cls(value=float(raw["value"]))
        return cls(
            value=0.0,
            feature=int(raw["feature"]),
            threshold=float(raw["threshold"]),
            left=cls.from_dict(raw["left"]),
            right=cls.from_dict(raw["right"]),
        )


def _sequential_sse(values: np.ndarray) -> float:
    """Sum of squared deviations accumulated left to right in row order.

    This is the canonical SSE: two splits inducing the same partition produce
    bit-identical scores no matter which feature reached them, so the
    (sse, feature, threshold) tie-break is exact.
    """
    total = 0.0
    for v in values:
        total += float(v)
    mean = total / values.size
    acc = 0.0
    for v in values:
        acc += (float(v) - mean) ** 2
    return acc


def best_split(
    x: np.ndarray, y: np.ndarray, features: Sequence[int], min_leaf: int
) -> tuple[float, int, float] | None:
    """Greedy (sse, feature, threshold) over the candidate features, or None.

    Thresholds are midpoints between consecutive sorted distinct values; both
    children must keep at least min_leaf rows; ties break to the lowest
    feature index, then the lowest threshold. A fast prefix scan ranks the
    thresholds within each feature; the per-feature winner is re-scored with
    the canonical row-order SSE before features are compared.
    """
    n = y.size
    best: tuple[float, int, float] | None = None
    for f in sorted(int(i) for i in features):
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        ys = y[order]
        cum = np.cumsum(ys)
        cum2 = np.cumsum(ys * ys)
        left_n = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & ((n - left_n) >= min_leaf)
        if not valid.any():
            continue
        li = left_n[valid]
        sum_l = cum[li - 1]
        sum2_l = cum2[li - 1]
        sse_l = sum2_l - sum_l * sum_l / li
        sse_r = (cum2[-1] - sum2_l) - (cum[-1] - sum_l) ** 2 / (n - li)
        j = int(np.argmin(sse_l + sse_r))  # thresholds ascend: first min = lowest
        thr = float((xs[li[j] - 1] + xs[li[j]]) / 2.0)
        mask = x[:, f] <= thr
        cand = (_sequential_sse(y[mask]) + _sequential_sse(y[~mask]), f, thr)
        if best is None or cand < best:
            best = cand
    return best


def _fit_node(
    x: np.ndarray, y: np.ndarray, hyper: ForestHyper, rng: np.random.Generator
) -> _Node:
    node = _Node(value=float(y.mean()))
    if y.size < 2 * hyper.min_leaf or np.ptp(y) == 0.0:
        return node
    p = x.shape[1]
    n_feats = min(hyper.features_per_split, p)
    features = rng.choice(p, size=n_feats, replace=False)
    split = best_split(x, y, features, hyper.min_leaf)
    if split is None:
        return node
    _, node.feature, node.threshold = split
    mask = x[:, node.feature] <= node.threshold
    node.left = _fit_node(x[mask], y[mask], hyper, rng)
    node.right = _fit_node(x[~mask], y[~mask], hyper, rng)
    return node


def _predict_tree(node: _Node, x: np.ndarray) -> float:
    while not node.is_leaf:
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.value


@dataclass
class ForestModel:
    """A trained bagged-regression-tree ensemble for one forecast horizon."""

    horizon: int
    seed: int
    hyper: ForestHyper
    trees: list[_Node]
    y_min: float
    y_max: float
    n_features: int = FEATURE_COUNT
    oob_mse: float | None = None

    def to_json(self) -> str:
        payload = {
            "format_version": FOREST_FORMAT_VERSION,
            "horizon": self.horizon,
            "seed": self.seed,
            "hyper": {
                "tree_count": self.hyper.tree_count,
                "min_leaf": self.hyper.min_leaf,
                "features_per_split": self.hyper.features_per_split,
                "bootstrap": self.hyper.bootstrap,
            },
            "y_min": self.y_min,
            "y_max": self.y_max,
            "n_features": self.n_features,
            "oob_mse": self.oob_mse,
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        raw = json.loads(text)
        if raw.get("format_version") != FOREST_FORMAT_VERSION:
            raise EnsembleError(f"unsupported forest format {raw.get('format_version')!r}")
        return cls(
            horizon=int(raw["horizon"]),
            seed=int(raw["seed"]),
            hyper=ForestHyper(**raw["hyper"]),
            trees=[_Node.from_dict(t) for t in raw["trees"]],
            y_min=float(raw["y_min"]),
            y_max=float(raw["y_max"]),
            n_features=int(raw["n_features"]),
            oob_mse=raw.get("oob_mse"),
        )


def save_forest(model: ForestModel, path: Path | str) -> None:
    Path(path).write_text(model.to_json() + "\n", encoding="utf-8")


def load_forest(path: Path | str) -> ForestModel:
    return ForestModel.from_json(Path(path).read_text(encoding="utf-8"))


def fit_forest(
    rows: Sequence[FeatureRow],
    hyper: ForestHyper = ForestHyper(),
    seed: int = 0,
    horizon: int | None = None,
) -> ForestModel:
    """Fit tree_count trees, each on its own seeded bootstrap resample."""
    if not rows:
        raise EnsembleError("cannot fit a forest on zero rows")
    if any(r.y is None for r in rows):
        raise EnsembleError("all training rows must carry resolved targets")
    if len(rows) < hyper.min_leaf:
        raise EnsembleError(f"{len(rows)} rows < min_leaf {hyper.min_leaf}")
    horizons = {r.horizon for r in rows}
    if horizon is None:
        if len(horizons) != 1:
            raise EnsembleError(f"rows mix horizons {sorted(horizons)}; pass horizon explicitly")
        horizon = horizons.pop()

    x = np.array([r.x for r in rows], dtype=np.float64)
    y = np.array([r.y for r in rows], dtype=np.float64)
    n = y.size
    trees: list[_Node] = []
    oob_sq, oob_n = 0.0, 0
    children = np.random.SeedSequence(seed).spawn(hyper.tree_count)
    for child in children:
        rng = np.random.default_rng(child)
        if hyper.bootstrap:
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        tree = _fit_node(x[idx], y[idx], hyper, rng)
        trees.append(tree)
        if hyper.bootstrap:
            out = np.setdiff1d(np.arange(n), idx, assume_unique=False)
            for i in out:
                oob_sq += (_predict_tree(tree, x[i]) - y[i]) ** 2
                oob_n += 1
    return ForestModel(
        horizon=horizon,
        seed=seed,
        hyper=hyper,
        trees=trees,
        y_min=float(y.min()),
        y_max=float(y.max()),
        oob_mse=(oob_sq / oob_n) if oob_n else None,
    )


def predict_forest(model: ForestModel, x: Sequence[float], clamp: bool = True) -> float:
    """Mean of per-tree leaf values; clamped at zero for count targets."""
    vec = np.asarray(x, dtype=np.float64)
    if vec.shape != (model.n_features,):
        raise EnsembleError(f"feature vector shape {vec.shape} != ({model.n_features},)")
    mean = float(np.mean([_predict_tree(t, vec) for t in model.trees]))
    return max(mean, 0.0) if clamp else mean


# -- feature assembly and the stacking pipeline ------------------------------


def _weekly_incident_asof(view: SnapshotView, location: str, week_end: dt.date) -> float:
    """Incident deaths over the week ending week_end, as known in the view."""
    vec = view.cumulative(SIGNAL_CUM_DEATHS, location)
    inc, _ = incident(vec)
    days = [week_end - dt.timedelta(days=i) for i in range(7)]
    return float(sum(inc.value_on(d) for d in days if inc.covers(d)))


def trend_features(view: SnapshotView, location: str) -> tuple[float, float, float]:
    """(cumulative deaths, this week's, previous week's incident deaths) at the view date."""
    vec = view.cumulative(SIGNAL_CUM_DEATHS, location)
    cum_now = float(vec.values[-1])
    inc_week = _weekly_incident_asof(view, location, view.as_of)
    inc_prev = _weekly_incident_asof(view, location, view.as_of - ONE_WEEK)
    return cum_now, inc_week, inc_prev


def _constituent_points(
    sets: Mapping[str, ForecastSet], constituents: Sequence[str], horizon: int, location: str
) -> tuple[float, ...] | None:
    """The three incident-death points for one location, or None if any is absent."""
    points = []
    for method_id in constituents:
        fs = sets[method_id]
        target = TargetSpec(
            SIGNAL_DEATHS, KIND_INCIDENT, horizon, location, fs.origin + horizon * ONE_WEEK
        )
        value = fs.entries.get(target)
        if value is None or value.point is None:
            return None
        points.append(value.point)
    return tuple(points)


def _candidate_locations(
    sets: Mapping[str, ForecastSet], constituents: Sequence[str], horizon: int
) -> list[str]:
    common: set[str] | None = None
    for method_id in constituents:
        fs = sets[method_id]
        locs = {
            t.location
            for t in fs.entries
            if t.signal == SIGNAL_DEATHS and t.kind == KIND_INCIDENT and t.horizon_weeks == horizon
        }
        common = locs if common is None else common & locs
    return sorted(common or ())


def build_training_set(
    constituents: Sequence[str],
    current_origin: dt.date,
    horizon: int,
    store: Store,
    archive: ForecastArchive,
) -> list[FeatureRow]:
    """Training rows for one horizon: the two most recent resolved origins.

    Features are read from the snapshot at each row's own origin; targets come
    from the latest ground truth. A location missing from any constituent's
    forecast (or without trend data) is omitted entirely; a missing constituent
    *file* raises, signalling an incomplete archive.
    """
    if len(constituents) != 3:
        raise EnsembleError(f"expected 3 constituent method ids, got {len(constituents)}")
    origins = [current_origin - (horizon + 1) * ONE_WEEK, current_origin - horizon * ONE_WEEK]
    rows: list[FeatureRow] = []
    for origin in origins:
        sets = {m: archive.load(m, origin) for m in constituents}
        view = store.snapshot(origin)
        for location in _candidate_locations(sets, constituents, horizon):
            points = _constituent_points(sets, constituents, horizon, location)
            if points is None:
                continue
            try:
                trend = trend_features(view, location)
                truth = store.ground_truth(
                    SIGNAL_CUM_DEATHS, location, origin + horizon * ONE_WEEK, KIND_INCIDENT
                )
            except (UnresolvedTarget, MissingSeries):
                continue
            rows.append(
                FeatureRow(
                    x=points + trend, y=truth, location=location,
                    origin=origin, horizon=horizon,
                )
            )
    return rows


def stack_forecast(
    constituent_sets: Mapping[str, ForecastSet],
    forests: Mapping[int, ForestModel],
    store: Store,
    horizons: Sequence[int] | None = None,
) -> ForecastSet:
    """Readjusted point forecasts from the per-horizon forests."""
    if len(constituent_sets) != 3:
        raise EnsembleError(f"expected 3 constituent sets, got {len(constituent_sets)}")
    origins = {fs.origin for fs in constituent_sets.values()}
    if len(origins) != 1:
        raise EnsembleError(f"constituent sets mix origins {sorted(origins)}")
    origin = origins.pop()
    horizons = sorted(forests) if horizons is None else sorted(horizons)
    for h in horizons:
        if h not in forests:
            raise EnsembleError(f"no trained forest for horizon {h}")
    constituents = sorted(constituent_sets)
    view = store.snapshot(origin)
    method = MethodDescriptor(
        method_id=ENSEMBLE_METHOD_ID,
        category=CATEGORY_AIML,
        decisions=(
            ("model_family", "random_forest_stack"),
            ("learning_strategy", "bagged_regression_trees"),
            ("smoothing_window", "constituent"),
            ("hyperparameter_regime", "fixed_defaults"),
        ),
    )
    out = ForecastSet(method=method, origin=origin)
    for h in horizons:
        model = forests[h]
        for location in _candidate_locations(constituent_sets, constituents, h):
            points = _constituent_points(constituent_sets, constituents, h, location)
            if points is None:
                continue
            try:
                trend = trend_features(view, location)
            except MissingSeries:
                continue
            pred = predict_forest(model, points + trend)
            target = TargetSpec(SIGNAL_DEATHS, KIND_INCIDENT, h, location, origin + h * ONE_WEEK)
            out.add(target, ForecastValue(point=pred))
    return out


def mean_ensemble(
    sets: Sequence[ForecastSet], method_id: str = MEAN_ENSEMBLE_METHOD_ID
) -> ForecastSet:
    """Per-target arithmetic mean over the methods providing that target."""
    if not sets:
        raise EnsembleError("mean ensemble needs at least one forecast set")
    origins = {fs.origin for fs in sets}
    if len(origins) != 1:
        raise EnsembleError(f"forecast sets mix origins {sorted(origins)}")
    method = MethodDescriptor(
        method_id=method_id,
        category=CATEGORY_AIML,
        decisions=(("model_family", "mean_of_constituents"),),
    )
    out = ForecastSet(method=method, origin=origins.pop())
    targets = sorted({t for fs in sets for t in fs.entries})
    for target in targets:
        points = [
            fs.entries[target].point
            for fs in sets
            if target in fs.entries and fs.entries[target].point is not None
        ]
        if points:
            out.add(target, ForecastValue(point=sum(points) / len(points)))
    return out
