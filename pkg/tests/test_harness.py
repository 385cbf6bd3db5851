import csv
import datetime as dt
import io

import pytest

from epibench.archive import ForecastArchive
from epibench.forecast import ForecastSet, ForecastValue, MethodDescriptor, TargetSpec
from epibench.harness import (
    DEFAULT_CONSTITUENTS,
    EvaluationError,
    HarnessConfig,
    PlanError,
    RunPlan,
    SMOOTH14_ID,
    SMOOTH7_ID,
    configured_variants,
    evaluate,
    load_plan,
    run_retrospective,
    sensitivity_day_of_week,
    sensitivity_smoothing,
    summarize_reports,
    weekday_median_spread,
    write_evaluation,
)
from epibench.sikjalpha import REGIME_HOLDOUT, SikjalphaConfig
from epibench.store import SIGNAL_CUM_DEATHS, Store
from epibench.synth import generate_world

D = dt.date
WEEK = dt.timedelta(days=7)


@pytest.fixture(scope="module")
def stable_world():
    return generate_world(seed=21, n_locations=6, days=120, scenario="stable")


@pytest.fixture(scope="module")
def stable_store(stable_world):
    store = Store()
    stable_world.populate_store(store)
    return store


def world_config(world):
    return HarnessConfig(population={l.code: l.population for l in world.locations})


def sunday_on_or_after(day):
    return day + dt.timedelta(days=(6 - day.weekday()) % 7)


def small_plan(world, n_origins=2, horizons=(1, 2)):
    first = sunday_on_or_after(world.start + dt.timedelta(days=80))
    origins = [first + i * WEEK for i in range(n_origins)]
    return RunPlan(
        origins=origins,
        horizons=list(horizons),
        signals=["deaths"],
        kinds=["incident"],
        methods=list(DEFAULT_CONSTITUENTS),
    )


def test_plan_validation():
    with pytest.raises(PlanError):
        RunPlan(origins=[])
    with pytest.raises(PlanError):
        RunPlan(origins=[D(2020, 8, 2), D(2020, 8, 2)])
    with pytest.raises(PlanError):
        RunPlan(origins=[D(2020, 8, 2)], horizons=[5])
    with pytest.raises(PlanError):
        RunPlan(origins=[D(2020, 8, 2)], signals=["hospitalizations"])


def test_load_plan_explicit_and_period(tmp_path):
    explicit = tmp_path / "a.toml"
    explicit.write_text('origins = ["2020-08-02", "2020-08-09"]\nhorizons = [1, 2]\n')
    plan = load_plan(explicit)
    assert plan.origins == [D(2020, 8, 2), D(2020, 8, 9)]
    assert plan.horizons == [1, 2]

    period = tmp_path / "b.toml"
    period.write_text(
        'period_start = "2020-08-01"\nperiod_end = "2020-08-31"\norigin_weekday = "sunday"\n'
    )
    plan2 = load_plan(period)
    assert all(o.weekday() == 6 for o in plan2.origins)
    assert plan2.origins[0] == D(2020, 8, 2)
    assert len(plan2.origins) == 5


def test_run_retrospective_archives_per_method_origin(tmp_path, stable_world, stable_store):
    plan = small_plan(stable_world)
    archive = ForecastArchive(tmp_path / "archive")
    written = run_retrospective(stable_store, plan, archive, world_config(stable_world))
    assert len(written) == 6  # 2 origins x 3 bundled methods
    for method_id in plan.methods:
        assert archive.origins(method_id) == plan.origins
        assert archive.descriptor(method_id).category == "aiml"


def test_rerun_is_byte_identical(tmp_path, stable_world, stable_store):
    plan = small_plan(stable_world, n_origins=1)
    cfg = world_config(stable_world)
    a1 = ForecastArchive(tmp_path / "a1")
    a2 = ForecastArchive(tmp_path / "a2")
    w1 = run_retrospective(stable_store, plan, a1, cfg)
    w2 = run_retrospective(stable_store, plan, a2, cfg)
    for p1, p2 in zip(w1, w2):
        assert p1.read_bytes() == p2.read_bytes()


def test_no_foresight_guard_under_injected_versions(tmp_path, stable_world):
    plan = small_plan(stable_world, n_origins=1)
    cfg = world_config(stable_world)
    origin = plan.origins[0]

    base = Store()
    stable_world.populate_store(base)
    pruned = base.truncated(origin)

    a_full = ForecastArchive(tmp_path / "full")
    a_cut = ForecastArchive(tmp_path / "cut")
    w_full = run_retrospective(base, plan, a_full, cfg, paranoid=True)
    w_cut = run_retrospective(pruned, plan, a_cut, cfg)
    for p1, p2 in zip(w_full, w_cut):
        assert p1.read_bytes() == p2.read_bytes()


def test_run_rejects_unknown_method(tmp_path, stable_world, stable_store):
    plan = small_plan(stable_world, n_origins=1)
    plan.methods = ["SIkJalpha_smooth14_un10_hyper7", "not-a-method"]
    with pytest.raises(PlanError, match="not-a-method"):
        run_retrospective(stable_store, plan, ForecastArchive(tmp_path / "x"),
                          world_config(stable_world))


def perfect_and_biased_archive(tmp_path, store, origins, codes, horizons=(1, 2)):
    archive = ForecastArchive(tmp_path / "archive")
    for bias, method_id in ((1.0, "oracle-method"), (1.3, "biased-method")):
        desc = MethodDescriptor(method_id, "aiml")
        for origin in origins:
            fs = ForecastSet(method=desc, origin=origin)
            for code in codes:
                for h in horizons:
                    truth = store.ground_truth(
                        SIGNAL_CUM_DEATHS, code, origin + h * WEEK, "incident"
                    )
                    fs.add(
                        TargetSpec("deaths", "incident", h, code, origin + h * WEEK),
                        ForecastValue(point=bias * truth),
                    )
            archive.write(fs)
    return archive


def test_evaluate_perfect_method_ranks_first(tmp_path, stable_world, stable_store):
    origins = small_plan(stable_world).origins
    codes = [l.code for l in stable_world.locations]
    archive = perfect_and_biased_archive(tmp_path, stable_store, origins, codes)
    reports, boards = evaluate(stable_store, archive, metrics=("mae",))
    for r in reports:
        if r.method_id == "oracle-method":
            assert r.value == 0.0
    for row in boards["mae"]:
        if row.method_id == "oracle-method":
            assert row.rank == 1
        else:
            assert row.rank == 2
    assert {row.n_origins for row in boards["mae"]} == {len(origins)}


def test_evaluate_matches_independent_rescoring(tmp_path, stable_world, stable_store):
    origins = small_plan(stable_world).origins
    codes = [l.code for l in stable_world.locations]
    archive = perfect_and_biased_archive(tmp_path, stable_store, origins, codes)
    reports, _ = evaluate(stable_store, archive, metrics=("mae", "smape"))

    # independent rescoring straight off the archived CSV files
    def naive_scores(method_id, origin):
        path = archive.path(method_id, origin)
        rows = list(csv.DictReader(io.StringIO(path.read_text())))
        errs = {}
        for row in rows:
            if row["type"] != "point":
                continue
            h = int(row["target"].split(" ")[0])
            truth = stable_store.ground_truth(
                SIGNAL_CUM_DEATHS, row["location"], dt.date.fromisoformat(row["target_end_date"]),
                "incident",
            )
            yhat = float(row["value"])
            errs.setdefault(h, []).append((truth, yhat))
        out = {}
        for h, pairs in errs.items():
            mae = sum(abs(y - f) for y, f in pairs) / len(pairs)
            smape = sum(
                0.0 if y == f else abs(y - f) / (0.5 * abs(y + f)) for y, f in pairs
            ) / len(pairs)
            out[h] = {"mae": mae, "smape": smape}
        return out

    for r in reports:
        if r.location is not None:
            continue
        expected = naive_scores(r.method_id, dt.date.fromisoformat(r.origin))[r.horizon][r.metric]
        assert r.value == pytest.approx(expected, rel=1e-12)


def test_evaluate_empty_archive_errors(tmp_path, stable_store):
    with pytest.raises(EvaluationError, match="no resolvable"):
        evaluate(stable_store, ForecastArchive(tmp_path / "empty"))


def test_leaderboard_total_order_with_ties(tmp_path, stable_world, stable_store):
    origins = [small_plan(stable_world).origins[0]]
    codes = [l.code for l in stable_world.locations]
    archive = ForecastArchive(tmp_path / "archive")
    for method_id in ("tied-b", "tied-a"):
        desc = MethodDescriptor(method_id, "aiml")
        fs = ForecastSet(method=desc, origin=origins[0])
        for code in codes:
            truth = stable_store.ground_truth(SIGNAL_CUM_DEATHS, code, origins[0] + WEEK, "incident")
            fs.add(
                TargetSpec("deaths", "incident", 1, code, origins[0] + WEEK),
                ForecastValue(point=truth + 5.0),
            )
        archive.write(fs)
    _, boards = evaluate(stable_store, archive, metrics=("mae",))
    assert [r.method_id for r in boards["mae"]] == ["tied-a", "tied-b"]
    assert [r.rank for r in boards["mae"]] == [1, 2]


def test_write_and_summarize_reports(tmp_path, stable_world, stable_store):
    origins = small_plan(stable_world).origins
    codes = [l.code for l in stable_world.locations]
    archive = perfect_and_biased_archive(tmp_path, stable_store, origins, codes)
    reports, boards = evaluate(stable_store, archive, metrics=("mae", "smape"))
    out_dir = tmp_path / "reports"
    written = write_evaluation(reports, boards, out_dir)
    assert (out_dir / "metric_reports.csv").is_file()
    assert (out_dir / "leaderboard_mae.csv").is_file()
    header = (out_dir / "leaderboard_mae.csv").read_text().splitlines()[0]
    assert header == "rank,method_id,category,horizon,score,n_origins"
    text = summarize_reports(out_dir)
    assert "oracle-method" in text and "mae" in text


def test_sensitivity_smoothing_diverges_after_trend_break(tmp_path):
    world = generate_world(seed=5, n_locations=5, days=126, scenario="trend_break")
    store = Store()
    world.populate_store(store)
    break_date = world.start + dt.timedelta(days=world.locations[0].break_day)
    first = sunday_on_or_after(world.start + dt.timedelta(days=77))
    origins = [first + i * WEEK for i in range(4)]
    assert origins[-1] + WEEK <= world.end
    plan = RunPlan(origins=origins, horizons=[1], signals=["deaths"], kinds=["incident"],
                   methods=[SMOOTH7_ID, SMOOTH14_ID])
    archive = ForecastArchive(tmp_path / "archive")
    run_retrospective(store, plan, archive, world_config(world))
    rows, summary = sensitivity_smoothing(store, archive)
    assert len(rows) == len(origins)
    post_break = [r for r in rows if r.origin > break_date]
    assert post_break, "plan must include post-break origins"
    assert any(abs(r.difference) > 0 for r in post_break)
    assert summary >= 0.0


def test_sensitivity_smoothing_missing_variant(tmp_path, stable_store):
    archive = ForecastArchive(tmp_path / "nothing")
    with pytest.raises(EvaluationError, match="missing"):
        sensitivity_smoothing(stable_store, archive)


def test_day_of_week_emits_seven_groups(stable_world, stable_store):
    desc_cfg = [
        (d, c) for d, c in configured_variants(world_config(stable_world))
        if d.method_id == SMOOTH14_ID
    ]
    desc, cfg = desc_cfg[0]
    start = stable_world.start + dt.timedelta(days=80)
    end = start + dt.timedelta(days=13)
    per_day, summaries = sensitivity_day_of_week(
        stable_store, desc, cfg, start, end, horizons=(1,)
    )
    assert len(summaries) == 7
    assert [s.weekday for s in summaries] == [
        "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"
    ]
    assert len(per_day) == 14
    assert all(s.n == 2 for s in summaries)
    assert weekday_median_spread(summaries) >= 0.0


def test_day_of_week_rejects_short_period(stable_world, stable_store):
    desc, cfg = configured_variants(world_config(stable_world))[0]
    start = stable_world.start + dt.timedelta(days=80)
    with pytest.raises(PlanError):
        sensitivity_day_of_week(stable_store, desc, cfg, start, start + dt.timedelta(days=3))
