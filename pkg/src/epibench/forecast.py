"""Forecast data model and the bit-exact hub-style submission codec.

One submission file holds one method's forecasts at one origin date. The wire
format is a UTF-8 CSV with header

    forecast_date,target,target_end_date,location,type,quantile,value

where `target` follows the grammar '<k> wk ahead <inc|cum> <case|death>'.
Writing is canonical (fixed row order, shortest round-trip decimals), so
parse -> write -> parse is lossless and a second write is byte-identical.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
import re
from dataclasses import dataclass, field

from .dates import ONE_WEEK, parse_date

logger = logging.getLogger(__name__)

SIGNAL_CASES = "cases"
SIGNAL_DEATHS = "deaths"
SIGNALS = (SIGNAL_CASES, SIGNAL_DEATHS)

KIND_INCIDENT = "incident"
KIND_CUMULATIVE = "cumulative"
KINDS = (KIND_INCIDENT, KIND_CUMULATIVE)

CATEGORY_AIML = "aiml"
CATEGORY_HUMAN = "human_expert"

MIN_HORIZON = 1
MAX_HORIZON = 4

SUBMISSION_HEADER = "forecast_date,target,target_end_date,location,type,quantile,value"

_TARGET_RE = re.compile(r"^(\d+) wk ahead (inc|cum) (case|death)$")
_KIND_TO_WIRE = {KIND_INCIDENT: "inc", KIND_CUMULATIVE: "cum"}
_SIGNAL_TO_WIRE = {SIGNAL_CASES: "case", SIGNAL_DEATHS: "death"}
_WIRE_TO_KIND = {v: k for k, v in _KIND_TO_WIRE.items()}
_WIRE_TO_SIGNAL = {v: k for k, v in _SIGNAL_TO_WIRE.items()}


class FormatError(Exception):
    """A submission file or forecast value violates the declared format."""


class MissingQuantile(FormatError):
    """A required quantile level is absent from a forecast value."""


@dataclass(frozen=True, order=True)
class TargetSpec:
    """What one forecast entry is about: signal, kind, horizon, place, week."""

    signal: str
    kind: str
    horizon_weeks: int
    location: str
    target_week_end: dt.date

    def __post_init__(self):
        if self.signal not in SIGNALS:
            raise FormatError(f"unknown signal {self.signal!r}")
        if self.kind not in KINDS:
            raise FormatError(f"unknown kind {self.kind!r}")
        if not (MIN_HORIZON <= self.horizon_weeks <= MAX_HORIZON):
            raise FormatError(f"horizon {self.horizon_weeks} outside {MIN_HORIZON}..{MAX_HORIZON}")

    def wire_target(self) -> str:
        return (
            f"{self.horizon_weeks} wk ahead "
            f"{_KIND_TO_WIRE[self.kind]} {_SIGNAL_TO_WIRE[self.signal]}"
        )


@dataclass(frozen=True)
class ForecastValue:
    """Point and/or quantile and/or binned probabilistic forecast of a target.

    Quantiles are (level, value) pairs kept sorted by level with values
    non-decreasing; bins are ((lo, hi), probability) over half-open [lo, hi)
    intervals with probabilities summing to 1.
    """

    point: float | None = None
    quantiles: tuple[tuple[float, float], ...] | None = None
    bins: tuple[tuple[tuple[float, float], float], ...] | None = None

    def __post_init__(self):
        if self.point is None and self.quantiles is None and self.bins is None:
            raise FormatError("forecast value must carry a point, quantiles, or bins")
        if self.point is not None and not math.isfinite(self.point):
            raise FormatError("point forecast must be finite")
        if self.quantiles is not None:
            q = tuple(sorted((float(l), float(v)) for l, v in self.quantiles))
            if not q:
                raise FormatError("empty quantile list")
            levels = [l for l, _ in q]
            if len(set(levels)) != len(levels):
                raise FormatError("duplicate quantile level")
            for l, v in q:
                if not (0.0 < l < 1.0):
                    raise FormatError(f"quantile level {l} outside (0, 1)")
                if not math.isfinite(v):
                    raise FormatError("quantile value must be finite")
            values = [v for _, v in q]
            if any(b < a for a, b in zip(values, values[1:])):
                raise FormatError("quantile values must be non-decreasing in level")
            object.__setattr__(self, "quantiles", q)
        if self.bins is not None:
            b = tuple(((float(lo), float(hi)), float(p)) for (lo, hi), p in self.bins)
            if not b:
                raise FormatError("empty bin list")
            total = 0.0
            for (lo, hi), p in b:
                if p < 0:
                    raise FormatError("bin probability must be >= 0")
                if hi < lo:
                    raise FormatError("bin interval upper edge below lower edge")
                total += p
            if abs(total - 1.0) > 1e-9:
                raise FormatError(f"bin probabilities sum to {total}, expected 1")
            object.__setattr__(self, "bins", b)


@dataclass(frozen=True)
class MethodDescriptor:
    """Identity and declared pipeline decisions of a forecasting method."""

    method_id: str
    category: str = CATEGORY_HUMAN
    decisions: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.method_id:
            raise FormatError("method_id must be non-empty")
        if self.category not in (CATEGORY_AIML, CATEGORY_HUMAN):
            raise FormatError(f"unknown category {self.category!r}")
        object.__setattr__(self, "decisions", tuple(sorted(dict(self.decisions).items())))

    def decision(self, key: str) -> str | None:
        return dict(self.decisions).get(key)


@dataclass
class ForecastSet:
    """One method's forecasts at one origin date."""

    method: MethodDescriptor
    origin: dt.date
    entries: dict[TargetSpec, ForecastValue] = field(default_factory=dict)

    def add(self, target: TargetSpec, value: ForecastValue) -> None:
        self._check_alignment(target)
        if target in self.entries:
            raise FormatError(f"duplicate entry for {target}")
        self.entries[target] = value

    def _check_alignment(self, target: TargetSpec) -> None:
        expected = self.origin + target.horizon_weeks * ONE_WEEK
        # origin+7k is the native convention; origin+7k-1 admits hub files
        # whose epiweeks end the Saturday before a Sunday origin.
        if target.target_week_end not in (expected, expected - dt.timedelta(days=1)):
            raise FormatError(
                f"target week end {target.target_week_end} is not "
                f"origin + {target.horizon_weeks} weeks ({expected})"
            )

    def validate(self) -> None:
        for target in self.entries:
            self._check_alignment(target)


def _parse_float(text: str, what: str, row: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FormatError(f"row {row}: non-numeric {what} {text!r}") from None
    if not math.isfinite(value):
        raise FormatError(f"row {row}: non-finite {what}")
    return value


def parse_submission(data: bytes, method: MethodDescriptor | None = None) -> ForecastSet:
    """Parse a hub-style submission file into a ForecastSet.

    Rows with an unsupported target (daily horizons, horizons beyond
    4 weeks, unknown row types) are skipped and counted in a warning;
    rows that are malformed or misaligned with the week convention raise.
    Imported submissions default to the human_expert category.
    """
    if method is None:
        method = MethodDescriptor(method_id="imported", category=CATEGORY_HUMAN)
    text = data.decode("utf-8-sig")
    lines = text.splitlines()
    if not lines or lines[0].strip() != SUBMISSION_HEADER:
        raise FormatError(f"missing or wrong header; expected '{SUBMISSION_HEADER}'")

    origin: dt.date | None = None
    skipped = 0
    points: dict[TargetSpec, float] = {}
    quantiles: dict[TargetSpec, list[tuple[float, float]]] = {}

    for row, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 7:
            raise FormatError(f"row {row}: expected 7 fields, got {len(parts)}")
        fdate_s, target_s, tend_s, location, rtype, level_s, value_s = (p.strip() for p in parts)
        try:
            fdate = parse_date(fdate_s)
            tend = parse_date(tend_s)
        except ValueError:
            raise FormatError(f"row {row}: bad date") from None
        if origin is None:
            origin = fdate
        elif fdate != origin:
            raise FormatError(f"row {row}: forecast_date {fdate} differs from {origin}")

        m = _TARGET_RE.match(target_s)
        if m is None or rtype not in ("point", "quantile"):
            skipped += 1
            continue
        horizon = int(m.group(1))
        if not (MIN_HORIZON <= horizon <= MAX_HORIZON):
            skipped += 1
            continue
        target = TargetSpec(
            signal=_WIRE_TO_SIGNAL[m.group(3)],
            kind=_WIRE_TO_KIND[m.group(2)],
            horizon_weeks=horizon,
            location=location,
            target_week_end=tend,
        )
        native_end = fdate + horizon * ONE_WEEK
        if tend not in (native_end, native_end - dt.timedelta(days=1)):
            raise FormatError(
                f"row {row}: target_end_date {tend} is not forecast_date + {horizon} weeks"
            )
        value = _parse_float(value_s, "value", row)
        if rtype == "point":
            if level_s != "NA":
                raise FormatError(f"row {row}: point row must carry quantile NA")
            if target in points:
                raise FormatError(f"row {row}: duplicate point for {target_s} {location}")
            points[target] = value
        else:
            level = _parse_float(level_s, "quantile level", row)
            if not (0.0 < level < 1.0):
                raise FormatError(f"row {row}: quantile level {level} outside (0, 1)")
            quantiles.setdefault(target, []).append((level, value))

    if origin is None:
        raise FormatError("file has no data rows")
    if skipped:
        logger.warning("skipped %d unsupported row(s) while parsing %s", skipped, method.method_id)

    fs = ForecastSet(method=method, origin=origin)
    for target in sorted(set(points) | set(quantiles)):
        fs.add(
            target,
            ForecastValue(
                point=points.get(target),
                quantiles=tuple(quantiles[target]) if target in quantiles else None,
            ),
        )
    return fs


def write_submission(fs: ForecastSet) -> bytes:
    """Serialize a ForecastSet canonically (see module docstring).

    Bins are an internal representation and are not written; sets holding
    only bins for some target cannot round-trip through this codec.
    """
    fs.validate()
    lines = [SUBMISSION_HEADER]
    fdate = fs.origin.isoformat()
    for target in sorted(fs.entries):
        value = fs.entries[target]
        prefix = (
            f"{fdate},{target.wire_target()},{target.target_week_end.isoformat()},"
            f"{target.location}"
        )
        if value.point is not None:
            lines.append(f"{prefix},point,NA,{value.point!r}")
        if value.quantiles is not None:
            for level, qv in value.quantiles:
                lines.append(f"{prefix},quantile,{level!r},{qv!r}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def interval_from_quantiles(value: ForecastValue, nominal: float) -> tuple[float, float]:
    """The central interval at the nominal level, read off the quantile pairs."""
    if not (0.0 < nominal < 1.0):
        raise FormatError(f"nominal level {nominal} outside (0, 1)")
    if value.quantiles is None:
        raise MissingQuantile("forecast has no quantiles")
    lo_level = (1.0 - nominal) / 2.0
    hi_level = 1.0 - lo_level
    lo = hi = None
    for level, qv in value.quantiles:
        if abs(level - lo_level) < 1e-9:
            lo = qv
        if abs(level - hi_level) < 1e-9:
            hi = qv
    if lo is None or hi is None:
        raise MissingQuantile(
            f"levels {lo_level:g} and {hi_level:g} required for a {nominal:g} interval"
        )
    return lo, hi


def bins_from_quantiles(value: ForecastValue) -> ForecastValue:
    """Synthesize probability bins from a quantile forecast.

    Mass between consecutive quantile values is assigned to the half-open
    interval they bound (piecewise uniform); the residual tail mass below the
    first and above the last quantile is spread over one adjacent
    inter-quantile width. Two zero-probability catch-all bins extend to
    +/- infinity so every real observation lands in some bin.
    """
    if value.bins is not None:
        return value
    if value.quantiles is None:
        raise MissingQuantile("cannot synthesize bins without quantiles")
    q = value.quantiles
    levels = [l for l, _ in q]
    vals = [v for _, v in q]
    if len(q) >= 2:
        left_w = vals[1] - vals[0]
        right_w = vals[-1] - vals[-2]
    else:
        left_w = right_w = 0.0
    left_w = left_w if left_w > 0 else 1.0
    right_w = right_w if right_w > 0 else 1.0

    bins: list[tuple[tuple[float, float], float]] = []
    bins.append(((vals[0] - left_w, vals[0]), levels[0]))
    for i in range(len(q) - 1):
        bins.append(((vals[i], vals[i + 1]), levels[i + 1] - levels[i]))
    bins.append(((vals[-1], vals[-1] + right_w), 1.0 - levels[-1]))

    # fold mass stranded on zero-width intervals into the next real bin
    folded: list[tuple[tuple[float, float], float]] = []
    carry = 0.0
    for (lo, hi), p in bins:
        if hi == lo:
            carry += p
        else:
            folded.append(((lo, hi), p + carry))
            carry = 0.0
    if carry and folded:
        (lo, hi), p = folded[-1]
        folded[-1] = ((lo, hi), p + carry)

    folded.insert(0, ((-math.inf, folded[0][0][0]), 0.0))
    folded.append(((folded[-1][0][1], math.inf), 0.0))
    return ForecastValue(point=value.point, quantiles=value.quantiles, bins=tuple(folded))
