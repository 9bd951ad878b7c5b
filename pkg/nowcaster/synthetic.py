"""Seeded factor-driven data generating process with publication lags."""

__all__ = [
    "DgpConfig",
    "Simulation",
    "simulate",
    "snapshot_dates",
]


import logging
from datetime import date, timedelta
from typing import Any, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic.v1 import BaseModel, root_validator, validator

from .dataset import Frequency, MixedFrequencyDataset, expected_rows
from .period import Period
from .vintage import VintageStore

logger = logging.getLogger("simulate")


class DgpConfig(BaseModel):
    """Parameters of the synthetic single-factor economy.

    Columns are named `m1..mN` for monthly series, `q1..qK` for quarterly
    series, followed by the quarterly `target`.
    """

    n_monthly_series: int = 4
    n_quarterly_series: int = 1
    start: Period = Period(2005, 1)
    n_months: int = 120

    phi: float = 0.7
    factor_variance: float = 1.0
    loadings: Optional[List[float]] = None
    noise_variance: float = 0.25
    noise_variances: Optional[List[float]] = None
    scale: float = 1.0

    monthly_lag: int = 1
    quarterly_lag: int = 2
    publication_lags: Optional[List[int]] = None

    crisis_start: Optional[Period] = None
    crisis_length: int = 3
    crisis_shock: float = -4.0

    vintages_from: Optional[date] = None
    weekly_from: Optional[date] = None

    revisions: bool = False
    revision_noise: float = 0.1

    seed: int = 0

    class Config:
        extra = "forbid"
        frozen = True

    @validator("start", "crisis_start", pre=True)
    def period_string(cls, value: Any):
        return Period.parse(value) if isinstance(value, str) else value

    @validator("loadings", "noise_variances", "publication_lags", pre=True)
    def comma_separated(cls, value: Any):
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @validator("n_monthly_series", "n_quarterly_series", "crisis_length")
    def non_negative(cls, value: int):
        if value < 0:
            raise ValueError("Must not be negative.")
        return value

    @validator("n_months")
    def enough_months(cls, value: int):
        if value < 12:
            raise ValueError("Simulate at least 12 months.")
        return value

    @validator("phi")
    def stationary(cls, value: float):
        if not abs(value) < 1:
            raise ValueError("Factor AR coefficient must lie in (-1, 1).")
        return value

    @validator("factor_variance", "scale")
    def positive(cls, value: float):
        if not value > 0:
            raise ValueError("Must be positive.")
        return value

    @validator("noise_variance", "revision_noise", "monthly_lag", "quarterly_lag")
    def non_negative_number(cls, value: float):
        if value < 0:
            raise ValueError("Must not be negative.")
        return value

    @root_validator(skip_on_failure=True)
    def consistent(cls, values: Any):
        n_columns = values["n_monthly_series"] + values["n_quarterly_series"] + 1
        start: Period = values["start"]
        stop = start.shift(values["n_months"] - 1)

        for name in ["loadings", "noise_variances", "publication_lags"]:
            if values[name] is not None and len(values[name]) != n_columns:
                count = len(values[name])
                raise ValueError(f"Expected {n_columns} {name}, got {count}.")

        if any(lag < 0 for lag in values["publication_lags"] or []):
            raise ValueError("Publication lags must not be negative.")
        if any(variance < 0 for variance in values["noise_variances"] or []):
            raise ValueError("Noise variances must not be negative.")

        if crisis := values["crisis_start"]:
            if crisis < start or crisis.shift(values["crisis_length"] - 1) > stop:
                raise ValueError("Crisis window must lie inside the sample.")

        defaults = [values["monthly_lag"], values["quarterly_lag"]]
        lags = values["publication_lags"] or defaults
        first = values["vintages_from"] or start.shift(24).first_day()
        last = stop.shift(max(lags)).first_day()

        if first <= start.shift(max(lags)).first_day():
            raise ValueError("First vintage must come after the first publication.")
        if first > last:
            raise ValueError("First vintage must come before the end of the sample.")
        if weekly := values["weekly_from"]:
            if not first <= weekly <= last:
                raise ValueError("Cadence switch must lie inside the vintage range.")

        return values

    @property
    def columns(self) -> List[str]:
        return (
            [f"m{i + 1}" for i in range(self.n_monthly_series)]
            + [f"q{i + 1}" for i in range(self.n_quarterly_series)]
            + ["target"]
        )

    @property
    def frequencies(self) -> List[Frequency]:
        return ["monthly"] * self.n_monthly_series + ["quarterly"] * (
            self.n_quarterly_series + 1
        )

    @property
    def stop(self) -> Period:
        return self.start.shift(self.n_months - 1)

    @property
    def lags(self) -> List[int]:
        if self.publication_lags is not None:
            return list(self.publication_lags)
        return [
            self.monthly_lag if frequency == "monthly" else self.quarterly_lag
            for frequency in self.frequencies
        ]


class Simulation(NamedTuple):
    truth: MixedFrequencyDataset
    store: VintageStore


def snapshot_dates(config: DgpConfig) -> List[date]:
    """Return monthly as-of dates, then weekly ones from the cadence switch."""
    first = config.vintages_from or config.start.shift(24).first_day()
    last = config.stop.shift(max(config.lags)).first_day()
    weekly = config.weekly_from or last + timedelta(days=1)

    dates: List[date] = []
    period = Period.from_date(first)
    day = first

    while day < weekly and day <= last:
        dates.append(day)
        period = period.shift(1)
        day = period.first_day()

    day = max(weekly, dates[-1] + timedelta(days=1)) if dates else weekly
    while day <= last:
        dates.append(day)
        day += timedelta(days=7)

    if dates[-1] != last:
        dates.append(last)

    return dates


def simulate(config: DgpConfig) -> Simulation:
    """Draw the truth dataset and the vintage store it is released through."""
    rng = np.random.default_rng(config.seed)
    columns = config.columns
    n_rows = config.n_months
    n_columns = len(columns)

    loadings = (
        np.array(config.loadings, dtype=float)
        if config.loadings is not None
        else rng.uniform(0.5, 1.0, size=n_columns)
    )
    noise_variances = (
        np.array(config.noise_variances, dtype=float)
        if config.noise_variances is not None
        else np.full(n_columns, config.noise_variance)
    )

    shocks = np.zeros(n_rows)
    if config.crisis_start is not None:
        first = config.crisis_start - config.start
        shocks[first : first + config.crisis_length] = config.crisis_shock

    innovations = rng.normal(0, np.sqrt(config.factor_variance), size=n_rows) + shocks
    factor = np.empty(n_rows)
    factor[0] = rng.normal(0, np.sqrt(config.factor_variance / (1 - config.phi**2)))
    factor[0] += shocks[0]
    for t in range(1, n_rows):
        factor[t] = config.phi * factor[t - 1] + innovations[t]

    noise = rng.normal(size=(n_rows, n_columns)) * np.sqrt(noise_variances)
    values = config.scale * (factor[:, np.newaxis] * loadings + noise)
    draws = rng.normal(size=(n_rows, n_columns))
    perturbations = config.scale * config.revision_noise * draws

    for j, frequency in enumerate(config.frequencies):
        values[~expected_rows(frequency, config.start, n_rows), j] = np.nan

    truth = MixedFrequencyDataset(
        start=config.start,
        columns=tuple(columns),
        frequencies=tuple(config.frequencies),
        values=values,
        target="target",
    )

    periods = [config.start.shift(i) for i in range(n_rows)]
    release = np.array(
        [
            [period.shift(lag).first_day().toordinal() for lag in config.lags]
            for period in periods
        ]
    )

    snapshots: List[Tuple[date, MixedFrequencyDataset]] = []
    previous = np.zeros((n_rows, n_columns), dtype=bool)

    for as_of in snapshot_dates(config):
        visible = (release <= as_of.toordinal()) & truth.mask
        rows = np.flatnonzero(visible.any(axis=1))
        stop = int(rows[-1]) if len(rows) else 0

        grid = np.where(visible, truth.values, np.nan)
        if config.revisions:
            fresh = visible & ~previous
            for j in range(n_columns):
                observed = np.flatnonzero(visible[:, j])
                if len(observed) and fresh[observed[-1], j]:
                    grid[observed[-1], j] += perturbations[observed[-1], j]

        previous = visible
        snapshots.append((as_of, truth.with_values(grid[: stop + 1])))

    logger.info(
        "Simulated %d months of %d series released through %d vintages.",
        n_rows,
        n_columns,
        len(snapshots),
    )
    return Simulation(truth, VintageStore(tuple(snapshots)))
