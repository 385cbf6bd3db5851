import datetime as dt
import random

from epibench.forecast import (
    CATEGORY_AIML,
    ForecastSet,
    ForecastValue,
    KINDS,
    MethodDescriptor,
    SIGNALS,
    TargetSpec,
)

HUB_QUANTILE_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)


def random_forecast_set(rng: random.Random, n_entries: int | None = None) -> ForecastSet:
    """A valid ForecastSet expressible in the submission wire format."""
    method = MethodDescriptor(
        method_id=f"method-{rng.randint(0, 999)}", category=CATEGORY_AIML
    )
    origin = dt.date(2020, 7, 5) + dt.timedelta(days=7 * rng.randint(0, 10))
    fs = ForecastSet(method=method, origin=origin)
    n = n_entries if n_entries is not None else rng.randint(1, 12)
    seen = set()
    while len(seen) < n:
        signal = rng.choice(SIGNALS)
        kind = rng.choice(KINDS)
        horizon = rng.randint(1, 4)
        location = rng.choice(["06", "36", "48", "12", "US"])
        key = (signal, kind, horizon, location)
        if key in seen:
            continue
        seen.add(key)
        target = TargetSpec(
            signal=signal,
            kind=kind,
            horizon_weeks=horizon,
            location=location,
            target_week_end=origin + dt.timedelta(days=7 * horizon),
        )
        point = rng.uniform(0, 5000) if rng.random() < 0.8 else None
        quantiles = None
        if point is None or rng.random() < 0.5:
            center = rng.uniform(10, 5000)
            spread = sorted(abs(rng.gauss(0, center / 4)) for _ in HUB_QUANTILE_LEVELS)
            quantiles = tuple(
                (lvl, center + s * (i - 2)) for i, (lvl, s) in enumerate(zip(HUB_QUANTILE_LEVELS, spread))
            )
            values = sorted(v for _, v in quantiles)
            quantiles = tuple((lvl, v) for (lvl, _), v in zip(quantiles, values))
        fs.add(target, ForecastValue(point=point, quantiles=quantiles))
    return fs
