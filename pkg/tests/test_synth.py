import datetime as dt
import json

import numpy as np
import pytest

from epibench.store import SIGNAL_CUM_CASES, SIGNALS, Store
from epibench.synth import (
    SCENARIOS,
    generate_synthetic,
    generate_world,
    load_populations,
    write_world,
)

D = dt.date


def test_fixed_seed_is_byte_identical(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_synthetic(a, seed=9, n_locations=3, days=70, scenario="noisy")
    generate_synthetic(b, seed=9, n_locations=3, days=70, scenario="noisy")
    files_a = sorted(p.name for p in a.iterdir())
    files_b = sorted(p.name for p in b.iterdir())
    assert files_a == files_b
    for name in files_a:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_different_seed_differs(tmp_path):
    a = generate_world(seed=9, n_locations=2, days=70, scenario="noisy")
    b = generate_world(seed=10, n_locations=2, days=70, scenario="noisy")
    assert not np.array_equal(a.locations[0].obs_inc_cases, b.locations[0].obs_inc_cases)


def test_noiseless_scenarios_observe_truth():
    for scenario in ("stable", "trend_break"):
        world = generate_world(seed=1, n_locations=2, days=80, scenario=scenario)
        for loc in world.locations:
            np.testing.assert_array_equal(loc.obs_inc_cases, loc.true_inc_cases)
            np.testing.assert_array_equal(loc.obs_inc_deaths, loc.true_inc_deaths)


def test_back_correction_scenario_revises_dates():
    world = generate_world(seed=3, n_locations=2, days=70, scenario="noisy")
    day = world.start + dt.timedelta(days=40)
    later = world.start + dt.timedelta(days=45)
    v1 = world.version_vector("01", SIGNAL_CUM_CASES, day)
    v2 = world.version_vector("01", SIGNAL_CUM_CASES, later)
    assert v1.value_on(day) != v2.value_on(day)


def test_weekly_periodic_dumps_on_mondays():
    world = generate_world(seed=5, n_locations=1, days=84, scenario="weekly_periodic")
    loc = world.locations[0]
    weekdays = [(world.start + dt.timedelta(days=i)).weekday() for i in range(world.days)]
    mondays = [v for v, w in zip(loc.obs_inc_cases, weekdays) if w == 0]
    others = [v for v, w in zip(loc.obs_inc_cases, weekdays) if w != 0]
    assert min(mondays[1:]) > max(others[1:]) > 0
    # weekly totals preserved on complete weeks
    first_monday = weekdays.index(0)
    for lo in range(first_monday, world.days - 7, 7):
        np.testing.assert_allclose(
            loc.obs_inc_cases[lo: lo + 7].sum(),
            loc.true_inc_cases[lo: lo + 7].sum(),
            rtol=1e-9,
        )


def test_trend_break_bends_the_curve():
    world = generate_world(seed=6, n_locations=1, days=120, scenario="trend_break")
    loc = world.locations[0]
    b = loc.break_day
    assert loc.true_inc_cases[b - 1] > loc.true_inc_cases[b + 20]


def test_version_files_ingest_and_manifest(tmp_path):
    out = tmp_path / "world"
    world = generate_synthetic(out, seed=11, n_locations=2, days=70, scenario="stable")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["scenario"] == "stable"
    assert len(manifest["locations"]) == 2
    pops = load_populations(out / "populations.csv")
    assert set(pops) == {"01", "02"}
    store = Store()
    world.populate_store(store)
    view = store.snapshot(world.end)
    assert view.locations(SIGNAL_CUM_CASES) == ["01", "02"]
    # versions exist for every day and both signals
    assert len(store.version_dates(SIGNAL_CUM_CASES)) == 70


def test_rejects_bad_arguments():
    with pytest.raises(ValueError):
        generate_world(seed=1, n_locations=1, days=30, scenario="stable")
    with pytest.raises(ValueError):
        generate_world(seed=1, n_locations=1, days=80, scenario="nope")
    assert set(SCENARIOS) == {"stable", "trend_break", "weekly_periodic", "noisy"}
