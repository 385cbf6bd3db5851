"""Reduced SIkJalpha forecaster: two sequentially fitted linear systems.

Working series per location, from an as-of snapshot: daily new cases and
deaths (first differences of the cumulative vectors), smoothed by a trailing
window and clamped at zero. With ``B_j(t)`` the sum of smoothed new cases over
the j-th trailing 7-day block before day t, ``C(t-1)`` the raw cumulative
reported cases through the previous day, ``N`` the population, and ``g`` the
under-reporting factor mapping reported to total infections, the model is

    new_cases(t)  = (1 - g * C(t-1) / N) * sum_j beta_j  * B_j(t)
    new_deaths(t) =                        sum_j theta_j * B_j(t)

Both equations are linear in their coefficients, so they are fitted one after
the other by least squares with non-negativity enforced by one clip-and-refit
pass. Hyperparameters (lag count k, fit window) are picked per regime:
``holdout_validation`` minimizes 7-day-ahead forecast MAE on held-out days,
``windowed_fit_no_validation`` minimizes the mean squared in-window residual.
Forecasts iterate the same two equations day by day past the origin, feeding
predicted new cases back into the lag blocks.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .dates import ONE_WEEK
from .forecast import (
    CATEGORY_AIML,
    KIND_CUMULATIVE,
    KIND_INCIDENT,
    MethodDescriptor,
    ForecastValue,
    SIGNAL_CASES,
    SIGNAL_DEATHS,
    TargetSpec,
)
from .store import (
    DatedVector,
    SIGNAL_CUM_CASES,
    SIGNAL_CUM_DEATHS,
    SnapshotView,
    incident,
    smooth,
)

REGIME_HOLDOUT = "holdout_validation"
REGIME_WINDOWED = "windowed_fit_no_validation"

DEFAULT_LAG_GRID = (1, 2, 3)
DEFAULT_WINDOW_GRID = (14, 21, 28, 35, 49)
DEFAULT_POPULATION = 1e7
INCIDENT_CAP_FACTOR = 5.0

# score ties resolve to the smallest (k, window) candidate within this slack
_TIE_RTOL = 1e-9


class FitError(Exception):
    """The model cannot be fitted on the available data."""


class InsufficientHistory(FitError):
    """No hyperparameter candidate fits in the available history."""


@dataclass(frozen=True)
class SikjalphaConfig:
    """Pipeline decisions and hyperparameter search space for one variant."""

    smoothing_window: int = 14
    under_reporting: float = 10.0
    hyper_regime: str = REGIME_HOLDOUT
    holdout_days: int = 7
    lag_grid: tuple[int, ...] = DEFAULT_LAG_GRID
    window_grid: tuple[int, ...] = DEFAULT_WINDOW_GRID
    population: Mapping[str, float] = field(default_factory=dict)
    default_population: float = DEFAULT_POPULATION

    def __post_init__(self):
        if self.smoothing_window < 1:
            raise ValueError("smoothing_window must be >= 1")
        if self.under_reporting < 1.0:
            raise ValueError("under-reporting factor must be >= 1")
        if self.hyper_regime not in (REGIME_HOLDOUT, REGIME_WINDOWED):
            raise ValueError(f"unknown hyper regime {self.hyper_regime!r}")
        if self.holdout_days < 1:
            raise ValueError("holdout_days must be >= 1")

    def population_of(self, code: str) -> float:
        return float(self.population.get(code, self.default_population))


@dataclass
class SikjalphaParams:
    """Learned per-lag infection and death rate coefficients."""

    beta: np.ndarray
    theta: np.ndarray
    chosen_lags: int
    chosen_window: int
    flat: bool = False


@dataclass
class _Frame:
    """Aligned working arrays for one location as of a snapshot."""

    start: dt.date
    cum_cases: np.ndarray
    cum_deaths: np.ndarray
    inc_cases: np.ndarray
    inc_deaths: np.ndarray
    population: float

    def __len__(self) -> int:
        return self.cum_cases.size

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=len(self) - 1)


def _frame(view: SnapshotView, cfg: SikjalphaConfig, location: str) -> _Frame:
    cases = view.cumulative(SIGNAL_CUM_CASES, location)
    deaths = view.cumulative(SIGNAL_CUM_DEATHS, location)
    start = max(cases.start, deaths.start)
    end = min(cases.end, deaths.end)
    if end < start:
        raise InsufficientHistory(f"{location}: case and death series do not overlap")
    cases = DatedVector(start, cases.values[cases.index_of(start): cases.index_of(end) + 1])
    deaths = DatedVector(start, deaths.values[deaths.index_of(start): deaths.index_of(end) + 1])

    def working(vec: DatedVector) -> np.ndarray:
        inc, _ = incident(vec)
        return np.maximum(smooth(inc, cfg.smoothing_window).values, 0.0)

    return _Frame(
        start=start,
        cum_cases=cases.values,
        cum_deaths=deaths.values,
        inc_cases=working(cases),
        inc_deaths=working(deaths),
        population=cfg.population_of(location),
    )


def _block_sums(series: np.ndarray, rows: np.ndarray, k: int) -> np.ndarray:
    """B[i, j] = sum of series over the (j+1)-th trailing 7-day block before rows[i]."""
    csum = np.concatenate(([0.0], np.cumsum(series)))
    out = np.empty((rows.size, k))
    for j in range(1, k + 1):
        out[:, j - 1] = csum[rows - 7 * (j - 1)] - csum[rows - 7 * j]
    return out


def _clipped_nnls(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares with negatives clamped to zero and one active-set refit."""
    if not np.any(x):
        return np.zeros(x.shape[1])
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    if np.all(coef >= 0.0):
        return coef
    coef = np.maximum(coef, 0.0)
    active = np.flatnonzero(coef > 0.0)
    out = np.zeros(x.shape[1])
    if active.size:
        refit, *_ = np.linalg.lstsq(x[:, active], y, rcond=None)
        out[active] = np.maximum(refit, 0.0)
    return out


def _susceptible(frame: _Frame, cfg: SikjalphaConfig, rows: np.ndarray) -> np.ndarray:
    prev_cum = np.where(rows > 0, frame.cum_cases[np.maximum(rows - 1, 0)], 0.0)
    return np.maximum(1.0 - cfg.under_reporting * prev_cum / frame.population, 0.0)


def _fit_equations(
    frame: _Frame, cfg: SikjalphaConfig, k: int, last_row: int, window: int
) -> tuple[np.ndarray, np.ndarray, bool, float]:
    """Fit both equations on `window` rows ending at `last_row`.

    Returns (beta, theta, flat, in-window mean squared residual of both).
    """
    rows = np.arange(last_row - window + 1, last_row + 1)
    blocks = _block_sums(frame.inc_cases, rows, k)
    x_cases = _susceptible(frame, cfg, rows)[:, None] * blocks
    y_cases = frame.inc_cases[rows]
    y_deaths = frame.inc_deaths[rows]
    if not np.any(blocks):
        return np.zeros(k), np.zeros(k), True, float(np.mean(y_cases**2) + np.mean(y_deaths**2))
    beta = _clipped_nnls(x_cases, y_cases)
    theta = _clipped_nnls(blocks, y_deaths)
    resid = float(
        np.mean((y_cases - x_cases @ beta) ** 2) + np.mean((y_deaths - blocks @ theta) ** 2)
    )
    return beta, theta, False, resid


def _simulate(
    frame: _Frame,
    cfg: SikjalphaConfig,
    beta: np.ndarray,
    theta: np.ndarray,
    from_row: int,
    steps: int,
    cap_cases: float,
    cap_deaths: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Iterate both equations for `steps` days after row index `from_row`."""
    k = beta.size
    history = frame.inc_cases[: from_row + 1]
    extended = np.concatenate((history, np.zeros(steps)))
    pred_deaths = np.zeros(steps)
    cum_reported = float(frame.cum_cases[from_row])
    csum = np.concatenate(([0.0], np.cumsum(extended)))
    n = history.size
    for i in range(steps):
        t = n + i
        blocks = csum[t - 7 * np.arange(k)] - csum[t - 7 * np.arange(1, k + 1)]
        susceptible = max(1.0 - cfg.under_reporting * cum_reported / frame.population, 0.0)
        new_cases = min(max(susceptible * float(blocks @ beta), 0.0), cap_cases)
        new_deaths = min(max(float(blocks @ theta), 0.0), cap_deaths)
        extended[t] = new_cases
        csum[t + 1] = csum[t] + new_cases
        pred_deaths[i] = new_deaths
        cum_reported += new_cases
    return extended[n:], pred_deaths


def _feasible(cfg: SikjalphaConfig, history_len: int, k: int, window: int, holdout: int) -> bool:
    return history_len >= 7 * k + window + holdout


def _candidate_score(frame: _Frame, cfg: SikjalphaConfig, k: int, window: int) -> float:
    last = len(frame) - 1
    if cfg.hyper_regime == REGIME_WINDOWED:
        _, _, _, resid = _fit_equations(frame, cfg, k, last, window)
        return resid
    holdout = cfg.holdout_days
    beta, theta, _, _ = _fit_equations(frame, cfg, k, last - holdout, window)
    cap_c = INCIDENT_CAP_FACTOR * float(frame.inc_cases[: last - holdout + 1].max())
    cap_d = INCIDENT_CAP_FACTOR * float(frame.inc_deaths[: last - holdout + 1].max())
    sim_cases, sim_deaths = _simulate(frame, cfg, beta, theta, last - holdout, holdout, cap_c, cap_d)
    obs_cases = frame.inc_cases[last - holdout + 1: last + 1]
    obs_deaths = frame.inc_deaths[last - holdout + 1: last + 1]
    return float(np.mean(np.abs(sim_cases - obs_cases)) + np.mean(np.abs(sim_deaths - obs_deaths)))


def fit(view: SnapshotView, cfg: SikjalphaConfig, location: str) -> SikjalphaParams:
    """Select hyperparameters per the configured regime and fit both equations.

    The final coefficients always come from a refit on all data with the
    selected (lag count, window). An all-zero design yields zero coefficients
    with the flat-epidemic flag set instead of an error.
    """
    frame = _frame(view, cfg, location)
    holdout = cfg.holdout_days if cfg.hyper_regime == REGIME_HOLDOUT else 0
    candidates = [
        (k, w)
        for k in sorted(cfg.lag_grid)
        for w in sorted(cfg.window_grid)
        if _feasible(cfg, len(frame), k, w, holdout)
    ]
    if not candidates:
        raise InsufficientHistory(
            f"{location}: {len(frame)} days of history cannot fit any "
            f"(lags, window) candidate with holdout {holdout}"
        )
    scores = [_candidate_score(frame, cfg, k, w) for k, w in candidates]
    best = min(scores)
    tol = _TIE_RTOL * (1.0 + abs(best))
    chosen_k, chosen_w = next(
        cand for cand, score in zip(candidates, scores) if score <= best + tol
    )
    beta, theta, flat, _ = _fit_equations(frame, cfg, chosen_k, len(frame) - 1, chosen_w)
    return SikjalphaParams(
        beta=beta, theta=theta, chosen_lags=chosen_k, chosen_window=chosen_w, flat=flat
    )


def predict(
    params: SikjalphaParams,
    view: SnapshotView,
    cfg: SikjalphaConfig,
    location: str,
    horizons: tuple[int, ...] = (1, 2, 3, 4),
) -> dict[TargetSpec, ForecastValue]:
    """Simulate past the origin and aggregate to weekly point forecasts.

    Incident targets are 7-day sums over each target week; cumulative targets
    anchor at the origin's known cumulative value. Daily predicted incidents
    are capped at 5x the location's historical smoothed maximum so degenerate
    fits cannot blow up, and all points are non-negative.
    """
    frame = _frame(view, cfg, location)
    origin = view.as_of
    gap = (origin - frame.end).days
    if gap < 0:
        raise FitError(f"{location}: snapshot data extends past its own as-of date")
    max_h = max(horizons)
    steps = gap + 7 * max_h
    cap_c = INCIDENT_CAP_FACTOR * float(frame.inc_cases.max())
    cap_d = INCIDENT_CAP_FACTOR * float(frame.inc_deaths.max())
    sim_cases, sim_deaths = _simulate(
        frame, cfg, params.beta, params.theta, len(frame) - 1, steps, cap_c, cap_d
    )
    anchor_cases = float(frame.cum_cases[-1])
    anchor_deaths = float(frame.cum_deaths[-1])

    entries: dict[TargetSpec, ForecastValue] = {}
    for h in sorted(horizons):
        week_end_off = gap + 7 * h
        week_slice = slice(week_end_off - 7, week_end_off)
        week_end = origin + h * ONE_WEEK
        values = {
            (SIGNAL_CASES, KIND_INCIDENT): float(sim_cases[week_slice].sum()),
            (SIGNAL_DEATHS, KIND_INCIDENT): float(sim_deaths[week_slice].sum()),
            (SIGNAL_CASES, KIND_CUMULATIVE): anchor_cases + float(sim_cases[:week_end_off].sum()),
            (SIGNAL_DEATHS, KIND_CUMULATIVE): anchor_deaths + float(sim_deaths[:week_end_off].sum()),
        }
        for (signal, kind), value in values.items():
            target = TargetSpec(signal, kind, h, location, week_end)
            entries[target] = ForecastValue(point=max(value, 0.0))
    return entries


def bundled_variants(
    population: Mapping[str, float] | None = None,
    default_population: float = DEFAULT_POPULATION,
) -> list[tuple[MethodDescriptor, SikjalphaConfig]]:
    """The three bundled variants: smoothing 14/7 with 7-day holdout, and
    windowed fitting without a validation set."""
    population = dict(population or {})
    common = dict(population=population, default_population=default_population)

    def descriptor(method_id: str, smoothing: int, regime: str) -> MethodDescriptor:
        regime_tag = "holdout_validation_7d" if regime == REGIME_HOLDOUT else regime
        return MethodDescriptor(
            method_id=method_id,
            category=CATEGORY_AIML,
            decisions=(
                ("smoothing_window", str(smoothing)),
                ("model_family", "sikjalpha_reduced"),
                ("learning_strategy", "sequential_least_squares"),
                ("hyperparameter_regime", regime_tag),
            ),
        )

    return [
        (
            descriptor("SIkJalpha_smooth14_un10_hyper7", 14, REGIME_HOLDOUT),
            SikjalphaConfig(smoothing_window=14, under_reporting=10.0,
                            hyper_regime=REGIME_HOLDOUT, **common),
        ),
        (
            descriptor("SIkJalpha_smooth7_un10_hyper7", 7, REGIME_HOLDOUT),
            SikjalphaConfig(smoothing_window=7, under_reporting=10.0,
                            hyper_regime=REGIME_HOLDOUT, **common),
        ),
        (
            descriptor("SIkJalpha_window_noval", 14, REGIME_WINDOWED),
            SikjalphaConfig(smoothing_window=14, under_reporting=10.0,
                            hyper_regime=REGIME_WINDOWED, **common),
        ),
    ]
