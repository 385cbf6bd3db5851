import datetime as dt
import random

import numpy as np
import pytest

from epibench.store import (
    DatedVector,
    DuplicateVersion,
    MalformedFile,
    MissingSeries,
    NegativeValue,
    SIGNAL_CUM_CASES,
    SIGNAL_CUM_DEATHS,
    Store,
    UnresolvedTarget,
    incident,
    parse_truth_filename,
    smooth,
    truth_filename,
    write_truth_file,
)

D = dt.date


def truth_bytes(rows):
    lines = ["location,date,value"]
    lines += [f"{code},{day.isoformat()},{val}" for code, day, val in rows]
    return ("\n".join(lines) + "\n").encode()


def three_day_file(day3_value=10.0):
    rows = []
    for code, base in (("06", 1.0), ("36", 4.0)):
        rows += [
            (code, D(2020, 7, 3), base),
            (code, D(2020, 7, 4), base + 4),
            (code, D(2020, 7, 5), day3_value if code == "06" else base + 6),
        ]
    return truth_bytes(rows)


def test_ingest_counts_distinct_locations():
    store = Store()
    n = store.ingest_version(three_day_file(), SIGNAL_CUM_CASES, D(2020, 7, 5))
    assert n == 2
    assert store.locations() == ["06", "36"]


def test_reingesting_same_version_is_rejected():
    store = Store()
    store.ingest_version(three_day_file(), SIGNAL_CUM_CASES, D(2020, 7, 5))
    with pytest.raises(DuplicateVersion):
        store.ingest_version(three_day_file(), SIGNAL_CUM_CASES, D(2020, 7, 5))


def test_back_correction_visible_only_from_later_snapshot():
    store = Store()
    store.ingest_version(three_day_file(day3_value=10.0), SIGNAL_CUM_CASES, D(2020, 7, 5))
    store.ingest_version(three_day_file(day3_value=8.0), SIGNAL_CUM_CASES, D(2020, 7, 6))
    v1 = store.snapshot(D(2020, 7, 5)).cumulative(SIGNAL_CUM_CASES, "06")
    v2 = store.snapshot(D(2020, 7, 6)).cumulative(SIGNAL_CUM_CASES, "06")
    assert v1.value_on(D(2020, 7, 5)) == 10.0
    assert v2.value_on(D(2020, 7, 5)) == 8.0


def test_malformed_row_reports_line_number():
    bad = b"location,date,value\n06,2020-07-03,1\n06,not-a-date,2\n"
    with pytest.raises(MalformedFile, match="line 3"):
        Store().ingest_version(bad, SIGNAL_CUM_CASES, D(2020, 7, 5))


def test_missing_header_rejected():
    with pytest.raises(MalformedFile, match="header"):
        Store().ingest_version(b"loc,day,count\n06,2020-07-03,1\n", SIGNAL_CUM_CASES, D(2020, 7, 5))


def test_negative_value_rejected():
    bad = truth_bytes([("06", D(2020, 7, 3), -1.0)])
    with pytest.raises(NegativeValue):
        Store().ingest_version(bad, SIGNAL_CUM_CASES, D(2020, 7, 5))


def test_noncontiguous_dates_rejected():
    bad = truth_bytes([("06", D(2020, 7, 3), 1.0), ("06", D(2020, 7, 6), 2.0)])
    with pytest.raises(MalformedFile, match="contiguous"):
        Store().ingest_version(bad, SIGNAL_CUM_CASES, D(2020, 7, 5))


def test_nonmonotone_cumulative_is_flagged_not_rejected(caplog):
    rows = [("06", D(2020, 7, 3), 5.0), ("06", D(2020, 7, 4), 3.0)]
    with caplog.at_level("WARNING", logger="epibench.store"):
        n = Store().ingest_version(truth_bytes(rows), SIGNAL_CUM_CASES, D(2020, 7, 5))
    assert n == 1
    assert any("back-correction" in r.message for r in caplog.records)


def test_snapshot_picks_newest_qualifying_version():
    store = Store()
    store.ingest_version(three_day_file(10.0), SIGNAL_CUM_CASES, D(2020, 7, 1))
    store.ingest_version(three_day_file(8.0), SIGNAL_CUM_CASES, D(2020, 7, 8))
    assert store.snapshot(D(2020, 7, 5)).cumulative(SIGNAL_CUM_CASES, "06").value_on(D(2020, 7, 5)) == 10.0
    assert store.snapshot(D(2020, 7, 8)).cumulative(SIGNAL_CUM_CASES, "06").value_on(D(2020, 7, 5)) == 8.0


def test_snapshot_before_all_versions_errors():
    store = Store()
    store.ingest_version(three_day_file(), SIGNAL_CUM_CASES, D(2020, 7, 1))
    with pytest.raises(MissingSeries):
        store.snapshot(D(2020, 6, 1))


def test_snapshot_isolation_under_later_ingest():
    store = Store()
    store.ingest_version(three_day_file(10.0), SIGNAL_CUM_CASES, D(2020, 7, 5))
    before = store.snapshot(D(2020, 7, 5)).canonical_bytes()
    store.ingest_version(three_day_file(8.0), SIGNAL_CUM_CASES, D(2020, 7, 9))
    store.ingest_version(three_day_file(9.0), SIGNAL_CUM_DEATHS, D(2020, 7, 9))
    after = store.snapshot(D(2020, 7, 5)).canonical_bytes()
    assert before == after


def test_incident_first_difference():
    vec, neg = incident(DatedVector(D(2020, 7, 1), np.array([5.0, 5.0, 8.0])))
    assert vec.values.tolist() == [5.0, 0.0, 3.0]
    assert neg == ()


def test_incident_constant_vector():
    vec, _ = incident(DatedVector(D(2020, 7, 1), np.array([4.0, 4.0, 4.0])))
    assert vec.values.tolist() == [4.0, 0.0, 0.0]


def test_incident_preserves_negatives_and_flags():
    vec, neg = incident(DatedVector(D(2020, 7, 1), np.array([10.0, 8.0])))
    assert vec.values.tolist() == [10.0, -2.0]
    assert neg == (D(2020, 7, 2),)


def test_incident_then_cumsum_reconstructs():
    rng = random.Random(7)
    for _ in range(50):
        n = rng.randint(1, 30)
        vals = np.array([rng.uniform(0, 100) for _ in range(n)])
        cum = DatedVector(D(2020, 7, 1), np.cumsum(vals))
        inc, _ = incident(cum)
        np.testing.assert_allclose(np.cumsum(inc.values), cum.values, rtol=1e-12)


def test_smooth_constant_is_identity():
    vec = DatedVector(D(2020, 7, 1), np.full(10, 3.5))
    out = smooth(vec, 14)
    np.testing.assert_array_equal(out.values, vec.values)
    assert out.start == vec.start


def test_smooth_window_one_is_identity():
    vec = DatedVector(D(2020, 7, 1), np.array([1.0, 9.0, 2.0]))
    assert smooth(vec, 1).values.tolist() == [1.0, 9.0, 2.0]


def test_smooth_hand_computed_trailing_means():
    vec = DatedVector(D(2020, 7, 1), np.array([0.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
    expected = [0.0, 3.5, 7 / 3, 7 / 4, 7 / 5, 7 / 6, 1.0]
    np.testing.assert_allclose(smooth(vec, 7).values, expected, rtol=1e-15)


def test_smooth_zero_window_rejected():
    with pytest.raises(ValueError):
        smooth(DatedVector(D(2020, 7, 1), np.array([1.0])), 0)


def test_smooth_bounded_by_window_extrema():
    rng = random.Random(11)
    for _ in range(30):
        n = rng.randint(1, 40)
        w = rng.randint(1, 20)
        vals = np.array([rng.uniform(-5, 50) for _ in range(n)])
        out = smooth(DatedVector(D(2020, 7, 1), vals), w).values
        for t in range(n):
            window = vals[max(0, t - w + 1): t + 1]
            assert window.min() - 1e-12 <= out[t] <= window.max() + 1e-12


def week_file(code, start, dailies, cum0=0.0):
    cum = cum0 + np.cumsum(dailies)
    days = [start + dt.timedelta(days=i) for i in range(len(dailies))]
    return truth_bytes([(code, d, c) for d, c in zip(days, cum)])


def test_ground_truth_incident_is_week_sum():
    store = Store()
    data = week_file("06", D(2020, 7, 6), [1.0] * 7)
    store.ingest_version(data, SIGNAL_CUM_DEATHS, D(2020, 7, 12))
    assert store.ground_truth(SIGNAL_CUM_DEATHS, "06", D(2020, 7, 12), "incident") == 7.0


def test_ground_truth_cumulative_reads_week_end():
    store = Store()
    data = week_file("06", D(2020, 7, 6), [10, 20, 10, 10, 10, 20, 20])
    store.ingest_version(data, SIGNAL_CUM_DEATHS, D(2020, 7, 12))
    assert store.ground_truth(SIGNAL_CUM_DEATHS, "06", D(2020, 7, 12), "cumulative") == 100.0


def test_ground_truth_follows_back_correction():
    store = Store()
    store.ingest_version(week_file("06", D(2020, 7, 6), [1.0] * 7), SIGNAL_CUM_DEATHS, D(2020, 7, 12))
    assert store.ground_truth(SIGNAL_CUM_DEATHS, "06", D(2020, 7, 12), "incident") == 7.0
    revised = week_file("06", D(2020, 7, 6), [1.0] * 6 + [0.0])
    store.ingest_version(revised, SIGNAL_CUM_DEATHS, D(2020, 7, 13))
    assert store.ground_truth(SIGNAL_CUM_DEATHS, "06", D(2020, 7, 12), "incident") == 6.0


def test_ground_truth_unresolved_week_errors():
    store = Store()
    store.ingest_version(week_file("06", D(2020, 7, 6), [1.0] * 5), SIGNAL_CUM_DEATHS, D(2020, 7, 10))
    with pytest.raises(UnresolvedTarget):
        store.ground_truth(SIGNAL_CUM_DEATHS, "06", D(2020, 7, 12), "incident")


def test_incident_truth_equals_cumulative_difference():
    rng = random.Random(3)
    dailies = [rng.uniform(0, 10) for _ in range(21)]
    store = Store()
    store.ingest_version(week_file("06", D(2020, 7, 6), dailies), SIGNAL_CUM_DEATHS, D(2020, 7, 26))
    w2 = D(2020, 7, 19)
    w1 = D(2020, 7, 12)
    lhs = store.ground_truth(SIGNAL_CUM_DEATHS, "06", w2, "incident")
    rhs = store.ground_truth(SIGNAL_CUM_DEATHS, "06", w2, "cumulative") - store.ground_truth(
        SIGNAL_CUM_DEATHS, "06", w1, "cumulative"
    )
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_store_round_trips_through_disk(tmp_path):
    store = Store(tmp_path / "store")
    store.ingest_version(three_day_file(10.0), SIGNAL_CUM_CASES, D(2020, 7, 5))
    store.ingest_version(three_day_file(8.0), SIGNAL_CUM_CASES, D(2020, 7, 6))
    reloaded = Store(tmp_path / "store")
    for as_of in (D(2020, 7, 5), D(2020, 7, 6)):
        assert (
            store.snapshot(as_of).canonical_bytes()
            == reloaded.snapshot(as_of).canonical_bytes()
        )


def test_truncated_store_drops_later_versions():
    store = Store()
    store.ingest_version(three_day_file(10.0), SIGNAL_CUM_CASES, D(2020, 7, 5))
    store.ingest_version(three_day_file(8.0), SIGNAL_CUM_CASES, D(2020, 7, 6))
    cut = store.truncated(D(2020, 7, 5))
    assert cut.version_dates(SIGNAL_CUM_CASES) == [D(2020, 7, 5)]
    assert cut.snapshot(D(2020, 7, 5)).canonical_bytes() == store.snapshot(D(2020, 7, 5)).canonical_bytes()


def test_truth_filename_round_trip():
    name = truth_filename(SIGNAL_CUM_DEATHS, D(2020, 7, 5))
    assert name == "cumulative_deaths_2020-07-05.csv"
    assert parse_truth_filename(name) == (SIGNAL_CUM_DEATHS, D(2020, 7, 5))


def test_write_truth_file_is_ingestible():
    vec = DatedVector(D(2020, 7, 3), np.array([1.0, 5.0, 10.0]))
    data = write_truth_file({"06": vec, "36": vec})
    store = Store()
    assert store.ingest_version(data, SIGNAL_CUM_CASES, D(2020, 7, 5)) == 2
    got = store.snapshot(D(2020, 7, 5)).cumulative(SIGNAL_CUM_CASES, "36")
    assert got.values.tolist() == [1.0, 5.0, 10.0]
