"""Versioned truth store: dated data versions and immutable as-of snapshots.

Every ingested file is one complete version of a cumulative series as it was
seen on its version date. Snapshots resolve, per series, the newest version
published on or before the requested as-of date and never expose anything
newer; ground truth always reads the latest version.
"""

from __future__ import annotations

import datetime as dt
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .dates import ONE_DAY, days_between, parse_date

logger = logging.getLogger(__name__)

SIGNAL_CUM_CASES = "cumulative_cases"
SIGNAL_CUM_DEATHS = "cumulative_deaths"
SIGNALS = (SIGNAL_CUM_CASES, SIGNAL_CUM_DEATHS)

TRUTH_HEADER = "location,date,value"


class StoreError(Exception):
    """Base error for store operations."""


class MalformedFile(StoreError):
    """A truth file does not parse under the declared format."""


class DuplicateVersion(StoreError):
    """The version date was already ingested for this signal."""


class NegativeValue(StoreError):
    """A cumulative count is negative (corrupt source)."""


class MissingSeries(StoreError):
    """No qualifying version exists for the requested series."""


class UnresolvedTarget(StoreError):
    """The latest version does not fully cover the target week."""


@dataclass(frozen=True)
class LocationId:
    """A location code (FIPS-style) plus a display name."""

    code: str
    name: str = ""

    def __post_init__(self):
        if not self.code:
            raise ValueError("location code must be non-empty")
        if not self.name:
            object.__setattr__(self, "name", self.code)


@dataclass(frozen=True)
class DatedVector:
    """A contiguous daily value vector anchored at a start date."""

    start: dt.date
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("DatedVector needs a non-empty 1-d vector")

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self) - 1)

    def covers(self, day: dt.date) -> bool:
        return self.start <= day <= self.end

    def index_of(self, day: dt.date) -> int:
        if not self.covers(day):
            raise KeyError(f"{day} outside [{self.start}, {self.end}]")
        return (day - self.start).days

    def value_on(self, day: dt.date) -> float:
        return float(self.values[self.index_of(day)])

    def through(self, day: dt.date) -> "DatedVector":
        """The prefix of the vector ending at `day` (which must be covered)."""
        return DatedVector(self.start, self.values[: self.index_of(day) + 1])

    def dates(self) -> list[dt.date]:
        return days_between(self.start, self.end)


def incident(cum: DatedVector) -> tuple[DatedVector, tuple[dt.date, ...]]:
    """Daily first differences of a cumulative vector.

    The first day differences against zero. Negative incidents (back-correction
    artifacts) are preserved; the dates carrying them are returned as flags.
    """
    vals = np.empty_like(cum.values)
    vals[0] = cum.values[0]
    np.subtract(cum.values[1:], cum.values[:-1], out=vals[1:])
    out = DatedVector(cum.start, vals)
    negatives = tuple(
        cum.start + dt.timedelta(days=int(i)) for i in np.flatnonzero(vals < 0)
    )
    if negatives:
        logger.warning("negative incidents on %d day(s), first %s", len(negatives), negatives[0])
    return out, negatives


def smooth(series: DatedVector, window_days: int) -> DatedVector:
    """Trailing moving average with a ramp-up head.

    out[t] = mean(in[max(first, t-window+1) .. t]); same dates as the input.
    Trailing (not centered) so no value depends on days after t.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    if window_days == 1:
        return series
    v = series.values
    csum = np.concatenate(([0.0], np.cumsum(v)))
    n = v.size
    idx = np.arange(n)
    lo = np.maximum(idx - window_days + 1, 0)
    out = (csum[idx + 1] - csum[lo]) / (idx - lo + 1)
    return DatedVector(series.start, out)


class VersionedSeries:
    """All ingested versions of one (signal, location) cumulative series."""

    def __init__(self, location: LocationId, signal: str):
        self.location = location
        self.signal = signal
        self._versions: dict[dt.date, DatedVector] = {}

    def __len__(self) -> int:
        return len(self._versions)

    def version_dates(self) -> list[dt.date]:
        return sorted(self._versions)

    def check_version(self, version_date: dt.date, vec: DatedVector) -> None:
        """Raise if adding this version would violate the series invariants."""
        if version_date in self._versions:
            raise DuplicateVersion(
                f"{self.signal}/{self.location.code}: version {version_date} already ingested"
            )
        for other_date, other in self._versions.items():
            earlier, later = (
                (other, vec) if other_date < version_date else (vec, other)
            )
            if later.start > earlier.start or later.end < earlier.end:
                raise MalformedFile(
                    f"{self.signal}/{self.location.code}: version {version_date} "
                    f"drops dates covered by version {other_date}"
                )

    def add_version(self, version_date: dt.date, vec: DatedVector) -> None:
        self.check_version(version_date, vec)
        self._versions[version_date] = vec

    def newest_at(self, as_of: dt.date) -> tuple[dt.date, DatedVector] | None:
        best = None
        for vdate, vec in self._versions.items():
            if vdate <= as_of and (best is None or vdate > best[0]):
                best = (vdate, vec)
        return best

    def latest(self) -> DatedVector:
        if not self._versions:
            raise MissingSeries(f"{self.signal}/{self.location.code}: no versions")
        return self._versions[max(self._versions)]

    def items(self) -> Iterator[tuple[dt.date, DatedVector]]:
        for vdate in sorted(self._versions):
            yield vdate, self._versions[vdate]


@dataclass(frozen=True)
class SnapshotView:
    """Immutable as-of view: per series, the newest version dated <= as_of.

    Vectors are additionally trimmed to dates <= as_of, so nothing in the view
    postdates the origin by any route.
    """

    as_of: dt.date
    _data: dict = field(repr=False)

    def has(self, signal: str, code: str) -> bool:
        return (signal, code) in self._data

    def cumulative(self, signal: str, code: str) -> DatedVector:
        try:
            return self._data[(signal, code)]
        except KeyError:
            raise MissingSeries(f"no {signal} series for {code} as of {self.as_of}") from None

    def locations(self, signal: str) -> list[str]:
        return sorted(code for sig, code in self._data if sig == signal)

    def canonical_bytes(self) -> bytes:
        """Deterministic serialization, used by snapshot-isolation checks."""
        buf = io.StringIO()
        buf.write(f"as_of={self.as_of.isoformat()}\n")
        for (signal, code) in sorted(self._data):
            vec = self._data[(signal, code)]
            buf.write(f"{signal},{code},{vec.start.isoformat()}\n")
            buf.write(",".join(repr(float(x)) for x in vec.values))
            buf.write("\n")
        return buf.getvalue().encode("utf-8")


def _parse_truth_rows(data: bytes) -> dict[str, list[tuple[dt.date, float]]]:
    """Parse a truth CSV into per-location (date, value) rows."""
    text = data.decode("utf-8-sig")
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRUTH_HEADER:
        raise MalformedFile(f"expected header '{TRUTH_HEADER}'")
    per_loc: dict[str, list[tuple[dt.date, float]]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise MalformedFile(f"line {lineno}: expected 3 fields, got {len(parts)}")
        code, datestr, valstr = (p.strip() for p in parts)
        if not code:
            raise MalformedFile(f"line {lineno}: empty location code")
        try:
            day = parse_date(datestr)
        except ValueError:
            raise MalformedFile(f"line {lineno}: bad date {datestr!r}") from None
        try:
            value = float(valstr)
        except ValueError:
            raise MalformedFile(f"line {lineno}: bad value {valstr!r}") from None
        if not np.isfinite(value):
            raise MalformedFile(f"line {lineno}: non-finite value")
        if value < 0:
            raise NegativeValue(f"line {lineno}: negative count {value} for {code}")
        per_loc.setdefault(code, []).append((day, value))
    return per_loc


def _rows_to_vector(code: str, rows: list[tuple[dt.date, float]]) -> DatedVector:
    rows = sorted(rows)
    dates = [d for d, _ in rows]
    if len(set(dates)) != len(dates):
        raise MalformedFile(f"duplicate date for location {code}")
    if (dates[-1] - dates[0]).days != len(dates) - 1:
        raise MalformedFile(f"location {code}: dates not contiguous")
    return DatedVector(dates[0], np.array([v for _, v in rows], dtype=np.float64))


class Store:
    """Versioned series for all signals/locations, optionally disk-backed.

    On-disk layout (stable):

        <root>/<signal>/<location>/<version-date>.csv

    each version file holding 'date,value' rows for a contiguous date range.
    Ingest is exclusive (single writer); snapshots are immutable values and
    safe to share across readers.
    """

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        self._series: dict[tuple[str, str], VersionedSeries] = {}
        self._ingested: dict[str, set[dt.date]] = {s: set() for s in SIGNALS}
        if self.root is not None and self.root.exists():
            self._load()

    # -- construction ------------------------------------------------------

    def _load(self) -> None:
        for signal in SIGNALS:
            sigdir = self.root / signal
            if not sigdir.is_dir():
                continue
            for locdir in sorted(p for p in sigdir.iterdir() if p.is_dir()):
                code = locdir.name
                for vfile in sorted(locdir.glob("*.csv")):
                    vdate = parse_date(vfile.stem)
                    vec = self._read_version_file(vfile)
                    self._get_series(signal, code).add_version(vdate, vec)
                    self._ingested[signal].add(vdate)

    @staticmethod
    def _read_version_file(path: Path) -> DatedVector:
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "date,value":
                raise MalformedFile(f"{path}: expected header 'date,value'")
            for line in fh:
                if not line.strip():
                    continue
                datestr, valstr = line.strip().split(",")
                rows.append((parse_date(datestr), float(valstr)))
        return _rows_to_vector(path.parent.name, rows)

    def _write_version_file(self, signal: str, code: str, vdate: dt.date, vec: DatedVector) -> None:
        locdir = self.root / signal / code
        locdir.mkdir(parents=True, exist_ok=True)
        lines = ["date,value"]
        for day, val in zip(vec.dates(), vec.values):
            lines.append(f"{day.isoformat()},{float(val)!r}")
        (locdir / f"{vdate.isoformat()}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    def _get_series(self, signal: str, code: str) -> VersionedSeries:
        key = (signal, code)
        if key not in self._series:
            if signal not in SIGNALS:
                raise StoreError(f"unknown signal {signal!r}")
            self._series[key] = VersionedSeries(LocationId(code), signal)
        return self._series[key]

    # -- ingestion ---------------------------------------------------------

    def ingest_version(self, data: bytes, signal: str, version_date: dt.date) -> int:
        """Ingest one truth file as the version of `signal` seen on version_date.

        Returns the number of series (locations) updated. Existing versions are
        never touched; re-ingesting a version date for the same signal is an
        operator error. Negative counts are rejected outright; non-monotone
        cumulative values are kept (real back-corrections do this) but flagged.
        """
        if signal not in SIGNALS:
            raise StoreError(f"unknown signal {signal!r}")
        if version_date in self._ingested[signal]:
            raise DuplicateVersion(f"{signal}: version {version_date} already ingested")
        per_loc = _parse_truth_rows(data)
        if not per_loc:
            raise MalformedFile("no data rows")
        vectors = {code: _rows_to_vector(code, rows) for code, rows in per_loc.items()}
        for code, vec in vectors.items():
            drops = np.flatnonzero(np.diff(vec.values) < 0)
            if drops.size:
                logger.warning(
                    "%s/%s version %s: cumulative drops on %d day(s) (back-correction?)",
                    signal, code, version_date, drops.size,
                )
        # validate every series before mutating anything
        staged = sorted(vectors.items())
        for code, vec in staged:
            existing = self._series.get((signal, code))
            if existing is not None:
                existing.check_version(version_date, vec)
        for code, vec in staged:
            self._get_series(signal, code).add_version(version_date, vec)
        self._ingested[signal].add(version_date)
        if self.root is not None:
            for code, vec in staged:
                self._write_version_file(signal, code, version_date, vec)
        return len(staged)

    # -- queries -----------------------------------------------------------

    def locations(self) -> list[str]:
        return sorted({code for _, code in self._series})

    def version_dates(self, signal: str) -> list[dt.date]:
        return sorted(self._ingested[signal])

    def snapshot(self, as_of: dt.date) -> SnapshotView:
        """Immutable view of the newest version per series dated <= as_of."""
        data: dict[tuple[str, str], DatedVector] = {}
        for key, series in self._series.items():
            found = series.newest_at(as_of)
            if found is None:
                continue
            _, vec = found
            if vec.start > as_of:
                continue
            if vec.end > as_of:
                vec = vec.through(as_of)
            data[key] = vec
        if not data:
            raise MissingSeries(f"no version available on or before {as_of}")
        return SnapshotView(as_of=as_of, _data=data)

    def latest(self, signal: str, code: str) -> DatedVector:
        key = (signal, code)
        if key not in self._series:
            raise MissingSeries(f"no {signal} series for {code}")
        return self._series[key].latest()

    def ground_truth(self, signal: str, code: str, week_end: dt.date, kind: str) -> float:
        """Resolved target value from the latest version.

        kind 'incident': sum of daily incidents across the week's 7 days.
        kind 'cumulative': the cumulative value on the week-ending date.
        The latest version must cover the target week fully.
        """
        vec = self.latest(signal, code)
        week_start = week_end - dt.timedelta(days=6)
        if not (vec.covers(week_start) and vec.covers(week_end)):
            raise UnresolvedTarget(
                f"{signal}/{code}: week ending {week_end} not fully covered "
                f"(latest data [{vec.start}, {vec.end}])"
            )
        if kind == "cumulative":
            return vec.value_on(week_end)
        if kind == "incident":
            anchor_day = week_end - dt.timedelta(days=7)
            anchor = vec.value_on(anchor_day) if vec.covers(anchor_day) else 0.0
            return vec.value_on(week_end) - anchor
        raise StoreError(f"unknown truth kind {kind!r}")

    def truncated(self, max_version: dt.date) -> "Store":
        """In-memory copy containing only versions dated <= max_version."""
        out = Store(root=None)
        for (signal, code), series in self._series.items():
            for vdate, vec in series.items():
                if vdate <= max_version:
                    out._get_series(signal, code).add_version(vdate, vec)
                    out._ingested[signal].add(vdate)
        return out


def truth_filename(signal: str, version_date: dt.date) -> str:
    """Canonical truth file name: <signal>_<YYYY-MM-DD>.csv."""
    return f"{signal}_{version_date.isoformat()}.csv"


def parse_truth_filename(name: str) -> tuple[str, dt.date]:
    """Recover (signal, version_date) from a truth file name."""
    stem = name[:-4] if name.endswith(".csv") else name
    for signal in SIGNALS:
        prefix = signal + "_"
        if stem.startswith(prefix):
            return signal, parse_date(stem[len(prefix):])
    raise MalformedFile(f"file name {name!r} does not match '<signal>_<YYYY-MM-DD>.csv'")


def write_truth_file(per_location: dict[str, DatedVector]) -> bytes:
    """Serialize per-location cumulative vectors in the truth file format."""
    lines = [TRUTH_HEADER]
    for code in sorted(per_location):
        vec = per_location[code]
        for day, val in zip(vec.dates(), vec.values):
            lines.append(f"{code},{day.isoformat()},{float(val)!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")
