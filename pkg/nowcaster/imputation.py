__all__ = [
    "FillMethod",
    "ArmaFit",
    "filled_dataset",
    "fill_mean",
    "fit_arma",
    "arma_residuals",
    "arma_forecast",
    "fill_arma",
    "fill",
]


import logging
from dataclasses import dataclass, replace
from typing import Any, Literal, Sequence, Tuple

import numpy as np
from pydantic.v1 import BaseModel, root_validator, validator
from scipy.optimize import minimize
from scipy.signal import lfilter

from .dataset import Frequency, MixedFrequencyDataset, expected_rows
from .error import ArmaFitError, DegenerateFitError, ImputationError

logger = logging.getLogger("nowcaster")


MIN_ARMA_OBSERVATIONS = 8
MAX_ARMA_LAGS = 2


class FillMethod(BaseModel):
    """Ragged edge filling strategy."""

    kind: Literal["mean", "arma"] = "mean"
    order: Tuple[int, int] = (1, 1)

    class Config:
        frozen = True

    @classmethod
    def parse(cls, value: Any) -> "FillMethod":
        """Parse `mean`, `arma` or `arma(p, q)`."""
        if isinstance(value, FillMethod):
            return value
        if isinstance(value, dict):
            return cls(**value)

        text = str(value).strip().lower().replace(" ", "")
        if text == "mean":
            return cls(kind="mean")
        if text == "arma":
            return cls(kind="arma")
        if text.startswith("arma(") and text.endswith(")"):
            p, _, q = text[5:-1].partition(",")
            try:
                return cls(kind="arma", order=(int(p), int(q)))
            except ValueError:
                pass
        raise ValueError(f"Invalid fill method {value!r}.")

    @validator("order")
    def order_range(cls, value: Tuple[int, int]):
        if any(not 0 <= lags <= MAX_ARMA_LAGS for lags in value):
            raise ValueError(f"ARMA lags must lie between 0 and {MAX_ARMA_LAGS}.")
        return value

    @root_validator(skip_on_failure=True)
    def order_nonempty(cls, values: Any):
        if values["kind"] == "arma" and sum(values["order"]) < 1:
            raise ValueError("ARMA filling needs at least one AR or MA lag.")
        return values

    def __str__(self) -> str:
        if self.kind == "mean":
            return "mean"
        return f"arma({self.order[0]},{self.order[1]})"


@dataclass(frozen=True)
class ArmaFit:
    """ARMA(p, q) coefficients estimated by conditional sum of squares."""

    series: str
    ar: Tuple[float, ...]
    ma: Tuple[float, ...]
    intercept: float
    variance: float
    n_obs: int = 0

    @property
    def order(self) -> Tuple[int, int]:
        return len(self.ar), len(self.ma)

    @property
    def mean(self) -> float:
        """Return the unconditional mean of the process."""
        return self.intercept / (1 - sum(self.ar))


def filled_dataset(
    ds: MixedFrequencyDataset,
    values: np.ndarray,
) -> MixedFrequencyDataset:
    """Rebuild the grid with dense feature columns tagged as monthly."""
    features = set(ds.feature_indices)
    frequencies: Tuple[Frequency, ...] = tuple(
        "monthly" if j in features else frequency
        for j, frequency in enumerate(ds.frequencies)
    )
    return replace(ds, values=values, frequencies=frequencies)


def fill_mean(ds: MixedFrequencyDataset) -> MixedFrequencyDataset:
    """Replace missing feature cells with the mean of the observed values."""
    values = ds.values.copy()

    for j in ds.feature_indices:
        column = values[:, j]
        missing = np.isnan(column)
        if not missing.any():
            continue
        observed = column[~missing]
        if not len(observed):
            raise ImputationError(ds.columns[j], "no observed values")
        column[missing] = observed.mean()

    return filled_dataset(ds, values)


def constrain_lags(unconstrained: np.ndarray) -> np.ndarray:
    """Map free parameters to a stationary lag polynomial."""
    coefficients = np.zeros(0)
    for partial in np.tanh(unconstrained):
        coefficients = np.append(coefficients - partial * coefficients[::-1], partial)
    return coefficients


def arma_residuals(
    values: np.ndarray,
    intercept: float,
    ar: Sequence[float],
    ma: Sequence[float],
) -> np.ndarray:
    """Return innovations conditional on the first p values, zero-initialized."""
    values = np.asarray(values, dtype=float)
    p = len(ar)

    shocks = values[p:] - intercept
    for lag, coefficient in enumerate(ar, start=1):
        shocks = shocks - coefficient * values[p - lag : len(values) - lag]

    residuals = np.zeros_like(values)
    residuals[p:] = lfilter([1.0], np.r_[1.0, np.asarray(ma, dtype=float)], shocks)
    return residuals


def fit_arma(
    values: Sequence[float],
    order: Tuple[int, int] = (1, 1),
    series: str = "",
    maxiter: int = 500,
) -> ArmaFit:
    """Estimate ARMA coefficients by minimizing the conditional sum of squares."""
    values = np.asarray(values, dtype=float)
    p, q = order

    if len(values) < MIN_ARMA_OBSERVATIONS:
        raise ArmaFitError(
            f"ARMA fitting needs at least {MIN_ARMA_OBSERVATIONS} observations, "
            f"got {len(values)}."
        )
    if np.isnan(values).any():
        raise ArmaFitError("ARMA fitting window contains missing values.")

    location = values.mean()
    scale = values.std()
    if scale == 0:
        raise DegenerateFitError("Constant series carries no innovation variance.")

    standardized = (values - location) / scale

    def unpack(params: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        ar = constrain_lags(params[1 : 1 + p])
        return params[0], ar, -constrain_lags(params[1 + p :])

    def objective(params: np.ndarray) -> float:
        intercept, ar, ma = unpack(params)
        residuals = arma_residuals(standardized, intercept, ar, ma)
        return float(np.sum(residuals[p:] ** 2))

    result = minimize(
        objective,
        np.zeros(1 + p + q),
        method="L-BFGS-B",
        options={"maxiter": maxiter},
    )

    intercept, ar, ma = unpack(result.x)
    fit = ArmaFit(
        series=series,
        ar=tuple(float(c) for c in ar),
        ma=tuple(float(c) for c in ma),
        intercept=float(location * (1 - ar.sum()) + scale * intercept),
        variance=float(scale**2 * result.fun / (len(values) - p)),
        n_obs=len(values),
    )

    if result.status == 1:
        raise ArmaFitError(
            f"ARMA optimizer didn't converge within {maxiter} iterations.",
            best=fit,
        )
    if not np.isfinite(result.fun):
        raise ArmaFitError("ARMA objective is not finite.", best=fit)
    if fit.variance <= 0:
        raise DegenerateFitError("Fitted innovation variance is zero.", best=fit)

    return fit


def arma_forecast(fit: ArmaFit, history: Sequence[float], steps: int) -> np.ndarray:
    """Iterate h-step-ahead forecasts from the end of the history."""
    history = np.asarray(history, dtype=float)

    residuals = list(arma_residuals(history, fit.intercept, fit.ar, fit.ma))
    path = list(history)

    for _ in range(steps):
        value = fit.intercept
        value += sum(c * path[-lag] for lag, c in enumerate(fit.ar, start=1))
        value += sum(c * residuals[-lag] for lag, c in enumerate(fit.ma, start=1))
        path.append(value)
        residuals.append(0.0)

    return np.array(path[len(history) :])


def fill_arma(
    ds: MixedFrequencyDataset,
    order: Tuple[int, int] = (1, 1),
) -> MixedFrequencyDataset:
    """Extrapolate trailing edges with ARMA forecasts, mean-fill every other gap."""
    values = ds.values.copy()

    for j in ds.feature_indices:
        column = values[:, j]
        name = ds.columns[j]
        missing = np.isnan(column)
        if not missing.any():
            continue
        observed = column[~missing]
        if not len(observed):
            raise ImputationError(name, "no observed values")
        mean = observed.mean()

        rows = np.flatnonzero(expected_rows(ds.frequencies[j], ds.start, ds.n_rows))
        cells = column[rows]
        present = np.flatnonzero(~np.isnan(cells))
        first, latest = present[0], present[-1]

        if latest < len(cells) - 1:
            history = cells[first : latest + 1].copy()
            history[np.isnan(history)] = mean
            try:
                fit = fit_arma(history, order, series=name)
            except ArmaFitError as exc:
                raise ImputationError(name, str(exc)) from exc
            forecasts = arma_forecast(fit, history, len(cells) - latest - 1)
            column[rows[latest + 1 :]] = forecasts
            logger.debug(
                "Filled %d trailing cells of %r with %s.", len(forecasts), name, fit
            )

        column[np.isnan(column)] = mean

    return filled_dataset(ds, values)


def fill(ds: MixedFrequencyDataset, method: FillMethod) -> MixedFrequencyDataset:
    """Dispatch to the configured fill method."""
    if method.kind == "arma":
        return fill_arma(ds, method.order)
    return fill_mean(ds)
