"""Seeded synthetic epidemic worlds with daily data versions.

Each world forward-simulates the same two-equation dynamics the forecaster
fits (per-lag infection rates over trailing 7-day blocks with susceptible
depletion, death rates over the same blocks), so a noiseless world is an
exact-recovery oracle: the true coefficients and the true continuation are
recorded in the world's manifest.

Scenarios shape the observation process, not the underlying dynamics:

    stable          observed = true counts (deterministic epidemic wave)
    trend_break     infection rates switch from growth to decay on a break
                    day; observations stay exact
    weekly_periodic true weekly totals are reported mostly on Mondays, and
                    each version under-reports its own last day (corrected
                    by the next day's version)
    noisy           multiplicative observation noise plus two provisional
                    trailing days per version (back-corrections)
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dates import days_between
from .store import (
    DatedVector,
    SIGNAL_CUM_CASES,
    SIGNAL_CUM_DEATHS,
    SIGNALS,
    Store,
    truth_filename,
    write_truth_file,
)

SCENARIO_STABLE = "stable"
SCENARIO_TREND_BREAK = "trend_break"
SCENARIO_WEEKLY_PERIODIC = "weekly_periodic"
SCENARIO_NOISY = "noisy"
SCENARIOS = (SCENARIO_STABLE, SCENARIO_TREND_BREAK, SCENARIO_WEEKLY_PERIODIC, SCENARIO_NOISY)

MIN_DAYS = 70
WARMUP_DAYS = 21
TRUE_LAGS = 3

MANIFEST_NAME = "manifest.json"
POPULATIONS_NAME = "populations.csv"

# observation-process constants
MONDAY_DUMP_SHARE = 0.7
SAME_DAY_REPORTED_SHARE = 0.4
PREV_DAY_REPORTED_SHARE = 0.85
NOISE_AMPLITUDE = 0.2


@dataclass
class LocationWorld:
    """One location's true dynamics and final observed series."""

    code: str
    name: str
    population: float
    gamma: float
    beta: np.ndarray
    beta_post: np.ndarray | None
    theta: np.ndarray
    break_day: int | None
    true_inc_cases: np.ndarray
    true_inc_deaths: np.ndarray
    obs_inc_cases: np.ndarray
    obs_inc_deaths: np.ndarray


@dataclass
class World:
    """A generated world: truth, observations, and versioned emission rules."""

    seed: int
    scenario: str
    start: dt.date
    days: int
    locations: list[LocationWorld] = field(default_factory=list)

    @property
    def end(self) -> dt.date:
        return self.start + dt.timedelta(days=self.days - 1)

    def location(self, code: str) -> LocationWorld:
        for loc in self.locations:
            if loc.code == code:
                return loc
        raise KeyError(code)

    def true_weekly_incident(self, code: str, signal: str, week_end: dt.date) -> float:
        loc = self.location(code)
        series = loc.true_inc_cases if signal == "cases" else loc.true_inc_deaths
        end = (week_end - self.start).days
        if not (6 <= end < self.days):
            raise ValueError(f"week ending {week_end} outside the generated span")
        return float(series[end - 6: end + 1].sum())

    def true_cumulative(self, code: str, signal: str, day: dt.date) -> float:
        loc = self.location(code)
        series = loc.true_inc_cases if signal == "cases" else loc.true_inc_deaths
        idx = (day - self.start).days
        if not (0 <= idx < self.days):
            raise ValueError(f"{day} outside the generated span")
        return float(series[: idx + 1].sum())

    def version_vector(self, code: str, signal: str, version_day: dt.date) -> DatedVector:
        """The cumulative series for one location as seen on version_day."""
        loc = self.location(code)
        upto = (version_day - self.start).days
        if not (0 <= upto < self.days):
            raise ValueError(f"version day {version_day} outside the generated span")
        inc = (loc.obs_inc_cases if signal == SIGNAL_CUM_CASES else loc.obs_inc_deaths)[
            : upto + 1
        ].copy()
        if self.scenario == SCENARIO_WEEKLY_PERIODIC:
            inc[upto] *= SAME_DAY_REPORTED_SHARE
        elif self.scenario == SCENARIO_NOISY:
            inc[upto] *= SAME_DAY_REPORTED_SHARE
            if upto >= 1:
                inc[upto - 1] *= PREV_DAY_REPORTED_SHARE
        return DatedVector(self.start, np.cumsum(inc))

    def version_dates(self) -> list[dt.date]:
        return days_between(self.start, self.end)

    def truth_file(self, signal: str, version_day: dt.date) -> bytes:
        per_loc = {
            loc.code: self.version_vector(loc.code, signal, version_day)
            for loc in self.locations
        }
        return write_truth_file(per_loc)

    def populate_store(self, store: Store) -> None:
        for version_day in self.version_dates():
            for signal in SIGNALS:
                store.ingest_version(self.truth_file(signal, version_day), signal, version_day)

    def manifest(self) -> dict:
        return {
            "format_version": 1,
            "seed": self.seed,
            "scenario": self.scenario,
            "start": self.start.isoformat(),
            "days": self.days,
            "locations": [
                {
                    "code": loc.code,
                    "name": loc.name,
                    "population": loc.population,
                    "gamma": loc.gamma,
                    "beta": loc.beta.tolist(),
                    "beta_post": None if loc.beta_post is None else loc.beta_post.tolist(),
                    "theta": loc.theta.tolist(),
                    "break_day": loc.break_day,
                }
                for loc in self.locations
            ],
        }


def _simulate_true(
    beta: np.ndarray,
    beta_post: np.ndarray | None,
    theta: np.ndarray,
    gamma: float,
    population: float,
    seed_cases: np.ndarray,
    seed_deaths: np.ndarray,
    days: int,
    break_day: int | None,
) -> tuple[np.ndarray, np.ndarray]:
    k = beta.size
    inc_cases = np.zeros(days)
    inc_deaths = np.zeros(days)
    inc_cases[:WARMUP_DAYS] = seed_cases
    inc_deaths[:WARMUP_DAYS] = seed_deaths
    csum = np.zeros(days + 1)
    csum[1: WARMUP_DAYS + 1] = np.cumsum(seed_cases)
    offsets = 7 * np.arange(k)
    for t in range(WARMUP_DAYS, days):
        blocks = csum[t - offsets] - csum[t - offsets - 7]
        b = beta_post if (break_day is not None and t >= break_day) else beta
        susceptible = max(1.0 - gamma * csum[t] / population, 0.0)
        inc_cases[t] = max(susceptible * float(blocks @ b), 0.0)
        inc_deaths[t] = max(float(blocks @ theta), 0.0)
        csum[t + 1] = csum[t] + inc_cases[t]
    return inc_cases, inc_deaths


def _weekly_redistribute(series: np.ndarray, start: dt.date) -> np.ndarray:
    """Report each Monday-to-Sunday week's total mostly on its Monday."""
    idx = np.arange(series.size)
    weekday = (start.weekday() + idx) % 7
    bucket = (start.weekday() + idx) // 7
    day_weight = np.where(weekday == 0, MONDAY_DUMP_SHARE, (1 - MONDAY_DUMP_SHARE) / 6)
    out = np.zeros_like(series)
    for b in np.unique(bucket):
        sel = bucket == b
        out[sel] = series[sel].sum() * day_weight[sel] / day_weight[sel].sum()
    return out


def generate_world(
    seed: int,
    n_locations: int,
    days: int,
    scenario: str,
    start: dt.date = dt.date(2020, 6, 1),
) -> World:
    """Build a deterministic world; identical arguments give identical bytes."""
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if days < MIN_DAYS:
        raise ValueError(f"days must be >= {MIN_DAYS}")
    if n_locations < 1:
        raise ValueError("need at least one location")

    world = World(seed=seed, scenario=scenario, start=start, days=days)
    rng = np.random.default_rng(seed)

    for i in range(n_locations):
        code = f"{i + 1:02d}"
        level = 140.0 + 37.0 * i
        # distinct, well-separated per-lag rates keep the fit identifiable
        if scenario == SCENARIO_TREND_BREAK:
            growth, gamma, population = 1.30, 1.0, 1e9
        elif scenario == SCENARIO_WEEKLY_PERIODIC:
            growth, gamma, population = 1.02, 1.0, 1e9
        elif scenario == SCENARIO_NOISY:
            growth, gamma, population = 1.15, 1.0, 5e5 + 60000.0 * i
        else:
            growth, gamma, population = 1.25, 1.0, 3.2e5 + 45000.0 * i
        shares = np.array([0.52, 0.31, 0.17])
        beta = shares * (growth / 7.0) * (1.0 + 0.015 * (i % 5))
        theta = np.array([0.0016, 0.0009, 0.0005]) * (1.0 + 0.02 * (i % 4))
        beta_post = None
        break_day = None
        if scenario == SCENARIO_TREND_BREAK:
            beta_post = shares * (0.55 / 7.0)
            break_day = (days * 2) // 3

        t_idx = np.arange(WARMUP_DAYS, dtype=float)
        seed_cases = level * (
            1.0 + 0.35 * np.sin(2 * math.pi * t_idx / 9.0)
            + 0.12 * np.cos(2 * math.pi * t_idx / 4.7 + 0.8 * i)
        )
        seed_deaths = 0.012 * level * (1.0 + 0.25 * np.sin(2 * math.pi * t_idx / 8.0 + 0.3 * i))

        true_cases, true_deaths = _simulate_true(
            beta, beta_post, theta, gamma, population, seed_cases, seed_deaths, days, break_day
        )

        obs_cases, obs_deaths = true_cases, true_deaths
        if scenario == SCENARIO_WEEKLY_PERIODIC:
            obs_cases = _weekly_redistribute(true_cases, start)
            obs_deaths = _weekly_redistribute(true_deaths, start)
        elif scenario == SCENARIO_NOISY:
            noise_c = 1.0 + NOISE_AMPLITUDE * (2.0 * rng.random(days) - 1.0)
            noise_d = 1.0 + NOISE_AMPLITUDE * (2.0 * rng.random(days) - 1.0)
            obs_cases = true_cases * noise_c
            obs_deaths = true_deaths * noise_d

        world.locations.append(
            LocationWorld(
                code=code,
                name=f"Region {code}",
                population=population,
                gamma=gamma,
                beta=beta,
                beta_post=beta_post,
                theta=theta,
                break_day=break_day,
                true_inc_cases=true_cases,
                true_inc_deaths=true_deaths,
                obs_inc_cases=np.asarray(obs_cases, dtype=np.float64),
                obs_inc_deaths=np.asarray(obs_deaths, dtype=np.float64),
            )
        )
    return world


def write_world(world: World, out_dir: Path) -> list[Path]:
    """Write daily truth files, the manifest, and the population table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for version_day in world.version_dates():
        for signal in SIGNALS:
            path = out_dir / truth_filename(signal, version_day)
            path.write_bytes(world.truth_file(signal, version_day))
            written.append(path)
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(world.manifest(), indent=2) + "\n", encoding="utf-8")
    written.append(manifest_path)
    pop_path = out_dir / POPULATIONS_NAME
    pop_lines = ["location,population"]
    pop_lines += [f"{loc.code},{loc.population!r}" for loc in world.locations]
    pop_path.write_text("\n".join(pop_lines) + "\n", encoding="utf-8")
    written.append(pop_path)
    return written


def generate_synthetic(
    out_dir: Path | str,
    seed: int,
    n_locations: int,
    days: int,
    scenario: str,
    start: dt.date = dt.date(2020, 6, 1),
    store: Store | None = None,
) -> World:
    """Generate, write truth files, and optionally ingest into a store."""
    world = generate_world(seed, n_locations, days, scenario, start)
    write_world(world, Path(out_dir))
    if store is not None:
        world.populate_store(store)
    return world


def load_populations(path: Path | str) -> dict[str, float]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != "location,population":
        raise ValueError(f"{path}: expected header 'location,population'")
    out = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        code, pop = line.split(",")
        out[code.strip()] = float(pop)
    return out
