"""Scoring rules for point, probabilistic, and interval forecasts.

All four metrics are plain means over (truth, forecast) pairs and are
invariant to pair order:

    mae       = (1/n) * sum |y_i - yhat_i|                       range [0, inf)
    smape     = (1/n) * sum |y_i - yhat_i| / (0.5 |y_i + yhat_i|)  range [0, 2]
                with the 0/0 pair contributing 0
    log_score = (1/n) * sum max(ln P(bin containing y_i), -10)   range [-10, 0]
                higher is better; P = 0 or undefined ln floors at -10
    coverage  = fraction of pairs with lower <= y_i <= upper     range [0, 1]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .forecast import ForecastValue, TargetSpec, interval_from_quantiles

METRIC_MAE = "mae"
METRIC_SMAPE = "smape"
METRIC_LOG_SCORE = "log_score"
METRIC_COVERAGE = "coverage"
METRICS = (METRIC_MAE, METRIC_SMAPE, METRIC_LOG_SCORE, METRIC_COVERAGE)

LOG_SCORE_FLOOR = -10.0

REPORT_HEADER = "method_id,metric,horizon,origin,location,value,n"


class MetricError(Exception):
    """A metric was asked to score pairs it cannot score."""


@dataclass(frozen=True)
class ScoredPair:
    """A resolved truth matched with the forecast issued for it."""

    truth: float
    forecast: ForecastValue
    target: TargetSpec


def _require(pairs, what: str):
    if not pairs:
        raise MetricError("empty pair list")
    for p in pairs:
        if what == "point" and p.forecast.point is None:
            raise MetricError(f"pair for {p.target} lacks a point forecast")
        if what == "bins" and p.forecast.bins is None:
            raise MetricError(f"pair for {p.target} lacks probability bins")
        if what == "quantiles" and p.forecast.quantiles is None:
            raise MetricError(f"pair for {p.target} lacks quantiles")


def mae(pairs: list[ScoredPair]) -> float:
    """Mean absolute error of point forecasts."""
    _require(pairs, "point")
    return sum(abs(p.truth - p.forecast.point) for p in pairs) / len(pairs)


def smape(pairs: list[ScoredPair]) -> float:
    """Symmetric mean absolute percentage error; the 0/0 pair scores 0."""
    _require(pairs, "point")
    total = 0.0
    for p in pairs:
        err = abs(p.truth - p.forecast.point)
        denom = 0.5 * abs(p.truth + p.forecast.point)
        if err == 0.0:
            continue
        if denom == 0.0:
            raise MetricError(
                f"smape undefined for y={p.truth}, yhat={p.forecast.point} (y + yhat = 0)"
            )
        total += err / denom
    return total / len(pairs)


def _bin_probability(pair: ScoredPair) -> float:
    y = pair.truth
    for (lo, hi), prob in pair.forecast.bins:
        if lo <= y < hi:
            return prob
    raise MetricError(
        f"truth {y} falls outside all bins for {pair.target} (bin-construction bug)"
    )


def log_score(pairs: list[ScoredPair]) -> float:
    """Mean floored log probability assigned to the observed bin."""
    _require(pairs, "bins")
    total = 0.0
    for p in pairs:
        prob = _bin_probability(p)
        if prob <= 0.0:
            total += LOG_SCORE_FLOOR
        else:
            total += max(math.log(prob), LOG_SCORE_FLOOR)
    return total / len(pairs)


def coverage(pairs: list[ScoredPair], nominal: float) -> float:
    """Fraction of truths inside the central interval at the nominal level."""
    _require(pairs, "quantiles")
    hits = 0
    for p in pairs:
        lo, hi = interval_from_quantiles(p.forecast, nominal)
        if lo <= p.truth <= hi:
            hits += 1
    return hits / len(pairs)


def compute(metric: str, pairs: list[ScoredPair], nominal: float = 0.95) -> float:
    if metric == METRIC_MAE:
        return mae(pairs)
    if metric == METRIC_SMAPE:
        return smape(pairs)
    if metric == METRIC_LOG_SCORE:
        return log_score(pairs)
    if metric == METRIC_COVERAGE:
        return coverage(pairs, nominal)
    raise MetricError(f"unknown metric {metric!r}")


def higher_is_better(metric: str) -> bool:
    return metric in (METRIC_LOG_SCORE, METRIC_COVERAGE)


def pairs_scoreable(metric: str, pairs: list[ScoredPair]) -> list[ScoredPair]:
    """The subset of pairs carrying the forecast form this metric needs."""
    if metric in (METRIC_MAE, METRIC_SMAPE):
        return [p for p in pairs if p.forecast.point is not None]
    if metric == METRIC_LOG_SCORE:
        return [p for p in pairs if p.forecast.bins is not None or p.forecast.quantiles is not None]
    if metric == METRIC_COVERAGE:
        return [p for p in pairs if p.forecast.quantiles is not None]
    raise MetricError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class MetricReport:
    """One metric value for one (method, horizon, origin[, location]) group."""

    method_id: str
    metric: str
    horizon: int
    origin: str
    location: str | None
    value: float
    n: int

    def csv_row(self) -> str:
        loc = self.location or ""
        return f"{self.method_id},{self.metric},{self.horizon},{self.origin},{loc},{self.value!r},{self.n}"


def write_reports(reports: list[MetricReport]) -> str:
    lines = [REPORT_HEADER]
    lines += [r.csv_row() for r in reports]
    return "\n".join(lines) + "\n"
