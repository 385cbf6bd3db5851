"""Rolling-origin retrospective runner, scoring, and sensitivity analyses.

Bundled forecasters only ever receive the as-of snapshot for their origin; a
paranoid mode re-runs every origin against a store with all later versions
deleted and fails loudly on any byte difference in the produced submissions.
Evaluation re-reads the archive from disk, so every score is reproducible
from files alone.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .archive import ForecastArchive
from .dates import WEEKDAY_NAMES, days_between, parse_date, weekday_index
from .ensemble import (
    build_training_set,
    fit_forest,
    ForestHyper,
    mean_ensemble,
    save_forest,
    stack_forecast,
)
from .forecast import (
    FormatError,
    ForecastSet,
    KINDS,
    SIGNALS,
    bins_from_quantiles,
    write_submission,
)
from .metrics import (
    MetricError,
    METRICS,
    MetricReport,
    ScoredPair,
    compute,
    higher_is_better,
    pairs_scoreable,
    write_reports,
)
from .sikjalpha import SikjalphaConfig, bundled_variants, fit, predict
from .store import (
    MissingSeries,
    SIGNAL_CUM_CASES,
    SIGNAL_CUM_DEATHS,
    Store,
    UnresolvedTarget,
)
from .synth import load_populations

logger = logging.getLogger(__name__)

CUM_SIGNAL_OF = {"cases": SIGNAL_CUM_CASES, "deaths": SIGNAL_CUM_DEATHS}

LEADERBOARD_HEADER = "rank,method_id,category,horizon,score,n_origins"
REPORTS_FILENAME = "metric_reports.csv"
SUMMARY_FILENAME = "summary.txt"

SMOOTH7_ID = "SIkJalpha_smooth7_un10_hyper7"
SMOOTH14_ID = "SIkJalpha_smooth14_un10_hyper7"
DEFAULT_CONSTITUENTS = (SMOOTH14_ID, SMOOTH7_ID, "SIkJalpha_window_noval")


class PlanError(Exception):
    """A run plan or config file is invalid."""


class EvaluationError(Exception):
    """Evaluation cannot produce any score."""


class ParanoidViolation(Exception):
    """A method's output changed when post-origin versions were removed."""


@dataclass
class RunPlan:
    """Which origins, targets, and methods a retrospective run covers."""

    origins: list[dt.date]
    horizons: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    signals: list[str] = field(default_factory=lambda: ["deaths"])
    kinds: list[str] = field(default_factory=lambda: ["incident"])
    methods: list[str] = field(default_factory=lambda: list(DEFAULT_CONSTITUENTS))
    locations: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.origins:
            raise PlanError("plan needs at least one origin")
        if any(b <= a for a, b in zip(self.origins, self.origins[1:])):
            raise PlanError("plan origins must be strictly increasing")
        for h in self.horizons:
            if not 1 <= h <= 4:
                raise PlanError(f"horizon {h} outside 1..4")
        for s in self.signals:
            if s not in SIGNALS:
                raise PlanError(f"unknown signal {s!r}")
        for k in self.kinds:
            if k not in KINDS:
                raise PlanError(f"unknown kind {k!r}")
        if not self.methods:
            raise PlanError("plan needs at least one method")


def load_plan(path: Path | str) -> RunPlan:
    """Read a TOML plan; origins given explicitly or as a period + weekday."""
    raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    if "origins" in raw:
        origins = [parse_date(o) for o in raw["origins"]]
    elif "period_start" in raw and "period_end" in raw:
        weekday = weekday_index(raw.get("origin_weekday", "sunday"))
        start, end = parse_date(raw["period_start"]), parse_date(raw["period_end"])
        origins = [d for d in days_between(start, end) if d.weekday() == weekday]
    else:
        raise PlanError(f"{path}: plan needs 'origins' or 'period_start'/'period_end'")
    kwargs = {}
    for key in ("horizons", "signals", "kinds", "methods", "locations"):
        if key in raw:
            kwargs[key] = list(raw[key])
    return RunPlan(origins=origins, **kwargs)


@dataclass
class HarnessConfig:
    """Variant grids and the population table shared by all bundled methods."""

    lag_grid: tuple[int, ...] = (1, 2, 3)
    window_grid: tuple[int, ...] = (14, 21, 28, 35, 49)
    population: dict[str, float] = field(default_factory=dict)
    default_population: float = 1e7


def load_config(path: Path | str | None) -> HarnessConfig:
    if path is None:
        return HarnessConfig()
    path = Path(path)
    raw = tomllib.loads(path.read_text(encoding="utf-8"))
    sik = raw.get("sikjalpha", {})
    pop = raw.get("population", {})
    population = {}
    if "path" in pop:
        pop_path = Path(pop["path"])
        if not pop_path.is_absolute():
            pop_path = path.parent / pop_path
        population = load_populations(pop_path)
    return HarnessConfig(
        lag_grid=tuple(sik.get("lag_grid", (1, 2, 3))),
        window_grid=tuple(sik.get("window_grid", (14, 21, 28, 35, 49))),
        population=population,
        default_population=float(pop.get("default", 1e7)),
    )


def configured_variants(config: HarnessConfig):
    """Bundled variants with the harness grids and population table applied."""
    out = []
    for desc, cfg in bundled_variants(config.population, config.default_population):
        out.append(
            (desc, dataclasses.replace(cfg, lag_grid=tuple(config.lag_grid),
                                       window_grid=tuple(config.window_grid)))
        )
    return out


def _plan_locations(store: Store, plan: RunPlan, origin: dt.date) -> list[str]:
    view = store.snapshot(origin)
    available = sorted(
        set(view.locations(SIGNAL_CUM_CASES)) & set(view.locations(SIGNAL_CUM_DEATHS))
    )
    if not plan.locations:
        return available
    missing = set(plan.locations) - set(available)
    if missing:
        raise MissingSeries(f"no snapshot data at {origin} for locations {sorted(missing)}")
    return sorted(plan.locations)


def _forecast_once(
    store: Store, plan: RunPlan, origin: dt.date, desc, cfg: SikjalphaConfig
) -> ForecastSet:
    view = store.snapshot(origin)
    fs = ForecastSet(method=desc, origin=origin)
    for location in _plan_locations(store, plan, origin):
        params = fit(view, cfg, location)
        entries = predict(params, view, cfg, location, horizons=tuple(plan.horizons))
        for target, value in entries.items():
            if target.signal in plan.signals and target.kind in plan.kinds:
                fs.add(target, value)
    return fs


def run_retrospective(
    store: Store,
    plan: RunPlan,
    archive: ForecastArchive,
    config: HarnessConfig | None = None,
    paranoid: bool = False,
) -> list[Path]:
    """Run every bundled method in the plan at every origin, archiving output.

    Each method sees exactly the snapshot of its origin. With paranoid=True
    every (method, origin) is re-run against a store truncated to the origin
    and the submission bytes must match exactly.
    """
    config = config or HarnessConfig()
    variants = {desc.method_id: (desc, cfg) for desc, cfg in configured_variants(config)}
    # imported submissions and ensembles live in the archive already; they are
    # listed in plans only for evaluation, not for running
    unknown = [m for m in plan.methods if m not in variants and not archive.origins(m)]
    if unknown:
        raise PlanError(f"unknown bundled method(s) {unknown}; known: {sorted(variants)}")
    to_run = [m for m in plan.methods if m in variants]
    written = []
    for origin in plan.origins:
        for method_id in to_run:
            desc, cfg = variants[method_id]
            fs = _forecast_once(store, plan, origin, desc, cfg)
            path = archive.write(fs)
            written.append(path)
            if paranoid:
                cut = store.truncated(origin)
                redone = _forecast_once(cut, plan, origin, desc, cfg)
                if write_submission(redone) != path.read_bytes():
                    raise ParanoidViolation(
                        f"{method_id} @ {origin}: output depends on versions after the origin"
                    )
    return written


# -- evaluation ---------------------------------------------------------------


def collect_pairs(
    store: Store, archive: ForecastArchive
) -> tuple[dict[tuple[str, int, dt.date], list[ScoredPair]], int]:
    """Scored pairs grouped by (method, horizon, origin); plus unresolved count."""
    grouped: dict[tuple[str, int, dt.date], list[ScoredPair]] = {}
    unresolved = 0
    for method_id in archive.methods():
        for origin in archive.origins(method_id):
            fs = archive.load(method_id, origin)
            for target, value in fs.entries.items():
                try:
                    truth = store.ground_truth(
                        CUM_SIGNAL_OF[target.signal],
                        target.location,
                        target.target_week_end,
                        target.kind,
                    )
                except (UnresolvedTarget, MissingSeries):
                    unresolved += 1
                    continue
                if value.quantiles is not None and value.bins is None:
                    value = bins_from_quantiles(value)
                grouped.setdefault((method_id, target.horizon_weeks, origin), []).append(
                    ScoredPair(truth, value, target)
                )
    return grouped, unresolved


@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    method_id: str
    category: str
    horizon: int
    score: float
    n_origins: int


def evaluate(
    store: Store,
    archive: ForecastArchive,
    metrics: tuple[str, ...] = METRICS,
    nominal: float = 0.95,
    per_location: bool = False,
) -> tuple[list[MetricReport], dict[str, list[LeaderboardRow]]]:
    """Score every archived forecast with resolved truth; build leaderboards.

    Each metric scores only the pairs carrying the forecast form it needs, so
    point-only methods simply do not appear under log_score/coverage. The
    leaderboard aggregate is the mean of per-origin scores; ranking is
    ascending for error metrics, descending otherwise, ties by method_id.
    """
    grouped, unresolved = collect_pairs(store, archive)
    if unresolved:
        logger.info("skipped %d target(s) without resolved truth", unresolved)
    if not grouped:
        raise EvaluationError("no resolvable targets in the archive")

    reports: list[MetricReport] = []
    for (method_id, horizon, origin), pairs in sorted(
        grouped.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2])
    ):
        for metric in metrics:
            sub = pairs_scoreable(metric, pairs)
            if not sub:
                continue
            try:
                value = compute(metric, sub, nominal)
            except (MetricError, FormatError):
                continue
            reports.append(
                MetricReport(method_id, metric, horizon, origin.isoformat(), None, value, len(sub))
            )
            if per_location:
                for p in sub:
                    reports.append(
                        MetricReport(
                            method_id, metric, horizon, origin.isoformat(),
                            p.target.location, compute(metric, [p], nominal), 1,
                        )
                    )

    leaderboards: dict[str, list[LeaderboardRow]] = {}
    for metric in metrics:
        rows: list[LeaderboardRow] = []
        per_method: dict[tuple[str, int], list[float]] = {}
        for r in reports:
            if r.metric == metric and r.location is None:
                per_method.setdefault((r.method_id, r.horizon), []).append(r.value)
        for horizon in sorted({h for _, h in per_method}):
            scored = []
            for (method_id, h), values in per_method.items():
                if h != horizon:
                    continue
                aggregate = sum(values) / len(values)
                scored.append((aggregate, method_id, len(values)))
            reverse = higher_is_better(metric)
            scored.sort(key=lambda t: ((-t[0] if reverse else t[0]), t[1]))
            for i, (score, method_id, n_origins) in enumerate(scored, start=1):
                rows.append(
                    LeaderboardRow(
                        rank=i,
                        method_id=method_id,
                        category=archive.descriptor(method_id).category,
                        horizon=horizon,
                        score=score,
                        n_origins=n_origins,
                    )
                )
        if rows:
            leaderboards[metric] = rows
    return reports, leaderboards


def write_evaluation(
    reports: list[MetricReport],
    leaderboards: dict[str, list[LeaderboardRow]],
    out_dir: Path | str,
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    reports_path = out_dir / REPORTS_FILENAME
    reports_path.write_text(write_reports(reports), encoding="utf-8")
    written.append(reports_path)
    for metric, rows in leaderboards.items():
        lines = [LEADERBOARD_HEADER]
        for r in rows:
            lines.append(
                f"{r.rank},{r.method_id},{r.category},{r.horizon},{r.score!r},{r.n_origins}"
            )
        path = out_dir / f"leaderboard_{metric}.csv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written


def summarize_reports(reports_dir: Path | str) -> str:
    """Human-readable summary assembled from the leaderboard files."""
    reports_dir = Path(reports_dir)
    boards = sorted(reports_dir.glob("leaderboard_*.csv"))
    if not boards:
        raise EvaluationError(f"no leaderboard files under {reports_dir}")
    lines = []
    for path in boards:
        metric = path.stem.replace("leaderboard_", "")
        direction = "higher is better" if higher_is_better(metric) else "lower is better"
        lines.append(f"== {metric} ({direction}) ==")
        rows = path.read_text(encoding="utf-8").strip().splitlines()[1:]
        by_horizon: dict[str, list[list[str]]] = {}
        for row in rows:
            rank, method_id, category, horizon, score, n = row.split(",")
            by_horizon.setdefault(horizon, []).append([rank, method_id, category, score, n])
        for horizon in sorted(by_horizon, key=int):
            lines.append(f"horizon {horizon}w:")
            for rank, method_id, category, score, n in by_horizon[horizon]:
                lines.append(
                    f"  {rank:>2}. {method_id:<34} [{category}] "
                    f"score={float(score):.4f} over {n} origin(s)"
                )
        lines.append("")
    return "\n".join(lines)


# -- ensemble driver ----------------------------------------------------------


def run_ensemble(
    store: Store,
    archive: ForecastArchive,
    origins: list[dt.date],
    horizons: tuple[int, ...] = (1, 2, 3, 4),
    constituents: tuple[str, str, str] = DEFAULT_CONSTITUENTS,
    hyper: ForestHyper = ForestHyper(),
    seed: int = 0,
    models_dir: Path | str | None = None,
    include_mean: bool = True,
) -> list[Path]:
    """Train per-horizon forests per origin and archive stacked forecasts.

    Constituent forecasts are re-read from the archive, never recomputed, so
    the stacking step is auditable from files alone.
    """
    written = []
    for origin in origins:
        forests = {}
        for h in horizons:
            rows = build_training_set(constituents, origin, h, store, archive)
            model = fit_forest(rows, hyper=hyper, seed=seed, horizon=h)
            forests[h] = model
            if models_dir is not None:
                mdir = Path(models_dir)
                mdir.mkdir(parents=True, exist_ok=True)
                save_forest(model, mdir / f"forest_{origin.isoformat()}_h{h}.json")
        sets = {m: archive.load(m, origin) for m in constituents}
        stacked = stack_forecast(sets, forests, store, horizons=horizons)
        written.append(archive.write(stacked))
        if include_mean:
            written.append(archive.write(mean_ensemble([sets[m] for m in constituents])))
    return written


# -- sensitivity analyses -----------------------------------------------------


@dataclass(frozen=True)
class SmoothingRow:
    origin: dt.date
    mae_smooth7: float
    mae_smooth14: float

    @property
    def difference(self) -> float:
        return self.mae_smooth7 - self.mae_smooth14


def sensitivity_smoothing(
    store: Store,
    archive: ForecastArchive,
    origins: list[dt.date] | None = None,
    horizons: tuple[int, ...] | None = None,
) -> tuple[list[SmoothingRow], float]:
    """Paired per-origin MAE of the smooth-7 and smooth-14 variants.

    Returns the per-origin table and the mean absolute difference.
    """
    for variant in (SMOOTH7_ID, SMOOTH14_ID):
        if variant not in archive.methods():
            raise EvaluationError(f"variant {variant} missing from the archive")
    if origins is None:
        origins = sorted(set(archive.origins(SMOOTH7_ID)) & set(archive.origins(SMOOTH14_ID)))
    grouped, _ = collect_pairs(store, archive)
    rows = []
    for origin in origins:
        maes = {}
        for variant in (SMOOTH7_ID, SMOOTH14_ID):
            pairs = []
            for (m, h, o), group in grouped.items():
                if m == variant and o == origin and (horizons is None or h in horizons):
                    pairs.extend(p for p in group if p.forecast.point is not None)
            if not pairs:
                raise EvaluationError(f"no resolved pairs for {variant} @ {origin}")
            maes[variant] = compute("mae", pairs)
        rows.append(SmoothingRow(origin, maes[SMOOTH7_ID], maes[SMOOTH14_ID]))
    summary = sum(abs(r.difference) for r in rows) / len(rows) if rows else 0.0
    return rows, summary


def write_smoothing_table(rows: list[SmoothingRow], summary: float, path: Path | str) -> None:
    lines = ["origin,mae_smooth7,mae_smooth14,difference"]
    for r in rows:
        lines.append(f"{r.origin.isoformat()},{r.mae_smooth7!r},{r.mae_smooth14!r},{r.difference!r}")
    lines.append(f"mean_absolute_difference,,,{summary!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class WeekdaySummary:
    weekday: str
    n: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def sensitivity_day_of_week(
    store: Store,
    desc,
    cfg: SikjalphaConfig,
    start: dt.date,
    end: dt.date,
    horizons: tuple[int, ...] = (1,),
    locations: list[str] | None = None,
) -> tuple[dict[dt.date, float], list[WeekdaySummary]]:
    """Run the method at every day of the period as origin; group MAE by weekday.

    Targets stay 7-day blocks anchored at each origin. Days whose targets have
    not resolved in the latest data are skipped.
    """
    if (end - start).days + 1 < 7:
        raise PlanError("day-of-week analysis needs a period of at least one week")
    per_day: dict[dt.date, float] = {}
    plan = RunPlan(
        origins=[start], horizons=list(horizons), signals=["deaths"], kinds=["incident"],
        methods=[desc.method_id], locations=locations or [],
    )
    for origin in days_between(start, end):
        view = store.snapshot(origin)
        pairs = []
        unresolved = False
        for location in _plan_locations(store, plan, origin):
            params = fit(view, cfg, location)
            entries = predict(params, view, cfg, location, horizons=tuple(horizons))
            for target, value in entries.items():
                if target.signal not in plan.signals or target.kind not in plan.kinds:
                    continue
                try:
                    truth = store.ground_truth(
                        CUM_SIGNAL_OF[target.signal], location, target.target_week_end, target.kind
                    )
                except UnresolvedTarget:
                    unresolved = True
                    break
                pairs.append(ScoredPair(truth, value, target))
            if unresolved:
                break
        if unresolved or not pairs:
            continue
        per_day[origin] = compute("mae", pairs)

    summaries = []
    for wd, name in enumerate(WEEKDAY_NAMES):
        values = sorted(v for d, v in per_day.items() if d.weekday() == wd)
        if values:
            arr = np.array(values)
            summaries.append(
                WeekdaySummary(
                    weekday=name,
                    n=len(values),
                    minimum=float(arr.min()),
                    q1=float(np.percentile(arr, 25)),
                    median=float(np.percentile(arr, 50)),
                    q3=float(np.percentile(arr, 75)),
                    maximum=float(arr.max()),
                )
            )
        else:
            summaries.append(WeekdaySummary(name, 0, np.nan, np.nan, np.nan, np.nan, np.nan))
    return per_day, summaries


def weekday_median_spread(summaries: list[WeekdaySummary]) -> float:
    """Max minus min of the per-weekday median MAE (NaN-free weekdays only)."""
    medians = [s.median for s in summaries if s.n > 0]
    if not medians:
        return 0.0
    return max(medians) - min(medians)


def write_weekday_table(summaries: list[WeekdaySummary], path: Path | str) -> None:
    lines = ["weekday,n,min,q1,median,q3,max"]
    for s in summaries:
        lines.append(
            f"{s.weekday},{s.n},{s.minimum!r},{s.q1!r},{s.median!r},{s.q3!r},{s.maximum!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
