"""Calendar helpers and the week convention.

A "week" is the 7-day block ending on a week-ending date. A forecast issued
at an origin date targets the k-week-ahead block spanning days
origin+7(k-1)+1 .. origin+7k, so the target week ends exactly 7k days after
the origin.
"""

from __future__ import annotations

import datetime as dt

ONE_DAY = dt.timedelta(days=1)
ONE_WEEK = dt.timedelta(days=7)

WEEKDAY_NAMES = (
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
)


def parse_date(text: str) -> dt.date:
    """Parse an ISO-8601 calendar date, e.g. '2020-07-05'."""
    return dt.date.fromisoformat(text.strip())


def target_week_end(origin: dt.date, horizon_weeks: int) -> dt.date:
    """Week-ending date of the horizon_weeks-ahead target week."""
    return origin + horizon_weeks * ONE_WEEK


def week_days(week_end: dt.date) -> list[dt.date]:
    """The 7 calendar days of the week ending on week_end."""
    return [week_end - dt.timedelta(days=i) for i in range(6, -1, -1)]


def weekday_index(name: str) -> int:
    """Map a weekday name to Python's Monday=0 .. Sunday=6 index."""
    try:
        return WEEKDAY_NAMES.index(name.strip().lower())
    except ValueError:
        raise ValueError(f"unknown weekday name: {name!r}") from None


def days_between(start: dt.date, end: dt.date) -> list[dt.date]:
    """All dates from start to end inclusive."""
    if end < start:
        return []
    return [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]


def weekdays_between(start: dt.date, end: dt.date, weekday: int = 6) -> list[dt.date]:
    """All dates with the given weekday (default Sunday) in [start, end]."""
    first = start + dt.timedelta(days=(weekday - start.weekday()) % 7)
    return days_between(first, end)[::7] if first <= end else []
