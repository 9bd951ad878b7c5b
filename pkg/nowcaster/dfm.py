"""Single-factor dynamic factor model estimated by expectation maximization."""

__all__ = [
    "DfmSettings",
    "StateSpaceModel",
    "FilterOutput",
    "SmootherOutput",
    "standardize",
    "kalman_filter",
    "kalman_smoother",
    "default_init",
    "em_step",
    "em_fit",
    "dfm_nowcast",
]


import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from beet.core.utils import FileSystemPath, JsonDict, dump_json, extra_field
from pydantic.v1 import BaseModel, validator
from scipy.optimize import minimize_scalar

from .dataset import MixedFrequencyDataset
from .error import DataError, EstimationError, FilterError, ModelFileError, ShapeError
from .period import Period, Quarter

logger = logging.getLogger("dfm")


MIN_OBSERVATIONS = 8
MIN_VARIANCE = 1e-12
MAX_DECREASE = 1e-8
MAX_PHI = 0.999
INIT_PHI = 0.5
INIT_VARIANCE_FLOOR = 1e-2
LOG_2PI = float(np.log(2 * np.pi))


class DfmSettings(BaseModel):
    """Estimation settings of the factor model."""

    max_iter: int = 200
    tol: float = 1e-4

    class Config:
        extra = "forbid"
        frozen = True

    @validator("max_iter")
    def max_iter_positive(cls, value: int):
        if value < 1:
            raise ValueError("Must run at least one iteration.")
        return value

    @validator("tol")
    def tol_positive(cls, value: float):
        if not value > 0:
            raise ValueError("Tolerance must be positive.")
        return value


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    """Observation loadings and AR(1) factor dynamics over standardized columns.

    Loadings and variances are expressed in standardized units. The means and
    scales map every column back to its original units.
    """

    columns: Tuple[str, ...]
    loadings: np.ndarray
    phi: float
    factor_variance: float
    idiosyncratic_variances: np.ndarray
    means: Optional[np.ndarray] = None
    scales: Optional[np.ndarray] = None
    target: Optional[str] = None
    frequencies: Tuple[str, ...] = ()

    iterations: int = extra_field(default=0)
    loglikelihoods: Tuple[float, ...] = extra_field(default=())

    def __post_init__(self):
        n = len(self.columns)
        loadings = np.array(self.loadings, dtype=float)
        variances = np.array(self.idiosyncratic_variances, dtype=float)
        means = np.zeros(n) if self.means is None else np.array(self.means, dtype=float)
        scales = (
            np.ones(n) if self.scales is None else np.array(self.scales, dtype=float)
        )

        for name, array in [
            ("loadings", loadings),
            ("idiosyncratic variances", variances),
            ("means", means),
            ("scales", scales),
        ]:
            if array.shape != (n,):
                raise ShapeError(f"Expected {n} {name}, got shape {array.shape}.")

        if not abs(self.phi) < 1:
            raise DataError(f"Factor AR coefficient {self.phi} isn't stationary.")
        if not self.factor_variance > 0 or not (variances > 0).all():
            raise DataError("Model variances must be positive.")
        if not loadings.any():
            raise DataError("Loadings are identically zero.")
        if not (scales > 0).all():
            raise DataError("Column scales must be positive.")

        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "idiosyncratic_variances", variances)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "phi", float(self.phi))
        object.__setattr__(self, "factor_variance", float(self.factor_variance))

    @property
    def initial_variance(self) -> float:
        """Return the stationary variance of the factor."""
        return self.factor_variance / (1 - self.phi**2)

    @property
    def loglikelihood(self) -> Optional[float]:
        return self.loglikelihoods[-1] if self.loglikelihoods else None

    def index_of(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise DataError("Unknown column.", column) from None

    def canonical(self) -> "StateSpaceModel":
        """Flip the factor sign so that the first nonzero loading is positive."""
        first = self.loadings[np.flatnonzero(self.loadings)[0]]
        if first > 0:
            return self
        return replace(self, loadings=-self.loadings)

    def select(self, columns: Sequence[str]) -> "StateSpaceModel":
        """Return the model restricted to a subset of columns."""
        indices = [self.index_of(column) for column in columns]
        assert self.means is not None and self.scales is not None
        return replace(
            self,
            columns=tuple(columns),
            loadings=self.loadings[indices],
            idiosyncratic_variances=self.idiosyncratic_variances[indices],
            means=self.means[indices],
            scales=self.scales[indices],
            frequencies=tuple(self.frequencies[j] for j in indices)
            if self.frequencies
            else (),
        )

    def to_json(self) -> JsonDict:
        assert self.means is not None and self.scales is not None
        return {
            "columns": list(self.columns),
            "frequencies": list(self.frequencies),
            "target": self.target,
            "loadings": self.loadings.tolist(),
            "phi": self.phi,
            "factor_variance": self.factor_variance,
            "idiosyncratic_variances": self.idiosyncratic_variances.tolist(),
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "iterations": self.iterations,
            "loglikelihood": self.loglikelihood,
            "loglikelihoods": list(self.loglikelihoods),
        }

    @classmethod
    def from_json(cls, data: JsonDict) -> "StateSpaceModel":
        return cls(
            columns=tuple(data["columns"]),
            loadings=np.array(data["loadings"], dtype=float),
            phi=float(data["phi"]),
            factor_variance=float(data["factor_variance"]),
            idiosyncratic_variances=np.array(
                data["idiosyncratic_variances"], dtype=float
            ),
            means=np.array(data["means"], dtype=float),
            scales=np.array(data["scales"], dtype=float),
            target=data.get("target"),
            frequencies=tuple(data.get("frequencies", ())),
            iterations=int(data.get("iterations", 0)),
            loglikelihoods=tuple(data.get("loglikelihoods", ())),
        )

    def predict(self, vintage: MixedFrequencyDataset, target_period: Quarter) -> float:
        return dfm_nowcast(self, vintage, target_period)

    def save(self, path: FileSystemPath, meta: Optional[JsonDict] = None):
        Path(path).write_text(dump_json({"meta": meta or {}, **self.to_json()}))

    @classmethod
    def load(cls, path: FileSystemPath) -> "StateSpaceModel":
        try:
            return cls.from_json(json.loads(Path(path).read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ModelFileError(
                f"Couldn't load factor model from {str(path)!r}: {exc}"
            ) from exc


@dataclass(frozen=True, eq=False)
class FilterOutput:
    """Per-period predicted and filtered moments of the factor."""

    predicted_mean: np.ndarray
    predicted_variance: np.ndarray
    filtered_mean: np.ndarray
    filtered_variance: np.ndarray
    loglikelihood: float


@dataclass(frozen=True, eq=False)
class SmootherOutput:
    """Smoothed factor moments, with `lag_one_covariance[t]` = Cov(f[t+1], f[t])."""

    smoothed_mean: np.ndarray
    smoothed_variance: np.ndarray
    lag_one_covariance: np.ndarray
    filtered: FilterOutput

    @property
    def loglikelihood(self) -> float:
        return self.filtered.loglikelihood


def check_columns(ssm: StateSpaceModel, ds: MixedFrequencyDataset):
    if ds.columns != ssm.columns:
        raise ShapeError(
            f"Dataset columns {list(ds.columns)} don't match "
            f"the model columns {list(ssm.columns)}."
        )


def standardize(ssm: StateSpaceModel, ds: MixedFrequencyDataset) -> np.ndarray:
    """Return the grid in the standardized units of the model."""
    check_columns(ssm, ds)
    return (ds.values - ssm.means) / ssm.scales


def filter_values(
    ssm: StateSpaceModel,
    y: np.ndarray,
    start: Optional[Period] = None,
) -> FilterOutput:
    """Run the missing-data Kalman filter over a standardized grid."""
    n_rows = y.shape[0]
    predicted_mean = np.empty(n_rows)
    predicted_variance = np.empty(n_rows)
    filtered_mean = np.empty(n_rows)
    filtered_variance = np.empty(n_rows)
    loglikelihood = 0.0

    mean, variance = 0.0, ssm.initial_variance

    for t in range(n_rows):
        if t > 0:
            mean = ssm.phi * mean
            variance = ssm.phi**2 * variance + ssm.factor_variance
        predicted_mean[t] = mean
        predicted_variance[t] = variance

        observed = np.flatnonzero(~np.isnan(y[t]))
        if len(observed):
            loadings = ssm.loadings[observed]
            innovation = y[t, observed] - loadings * mean
            covariance = variance * np.outer(loadings, loadings) + np.diag(
                ssm.idiosyncratic_variances[observed]
            )
            sign, logdet = np.linalg.slogdet(covariance)
            if sign <= 0 or not np.isfinite(logdet):
                raise FilterError(period_label(start, t), "innovation covariance")

            weighted = np.linalg.solve(
                covariance, np.column_stack([innovation, loadings])
            )
            gain = loadings @ weighted
            mean = mean + variance * gain[0]
            variance = variance - variance**2 * gain[1]
            loglikelihood -= 0.5 * (
                len(observed) * LOG_2PI + logdet + innovation @ weighted[:, 0]
            )

        if not (np.isfinite(mean) and np.isfinite(variance)):
            raise FilterError(period_label(start, t), "filtered moments")

        filtered_mean[t] = mean
        filtered_variance[t] = max(variance, 0.0)

    if not np.isfinite(loglikelihood):
        raise FilterError(period_label(start, n_rows - 1), "log-likelihood")

    return FilterOutput(
        predicted_mean,
        predicted_variance,
        filtered_mean,
        filtered_variance,
        loglikelihood,
    )


def smooth_values(
    ssm: StateSpaceModel,
    y: np.ndarray,
    start: Optional[Period] = None,
) -> SmootherOutput:
    """Run the fixed-interval smoother over a standardized grid."""
    filtered = filter_values(ssm, y, start)
    n_rows = y.shape[0]

    smoothed_mean = filtered.filtered_mean.copy()
    smoothed_variance = filtered.filtered_variance.copy()
    lag_one = np.empty(max(n_rows - 1, 0))

    for t in reversed(range(n_rows - 1)):
        predicted_variance = filtered.predicted_variance[t + 1]
        gain = filtered.filtered_variance[t] * ssm.phi / predicted_variance
        smoothed_mean[t] += gain * (
            smoothed_mean[t + 1] - filtered.predicted_mean[t + 1]
        )
        smoothed_variance[t] += gain**2 * (
            smoothed_variance[t + 1] - filtered.predicted_variance[t + 1]
        )
        lag_one[t] = gain * smoothed_variance[t + 1]

    return SmootherOutput(smoothed_mean, smoothed_variance, lag_one, filtered)


def period_label(start: Optional[Period], t: int) -> str:
    return str(t) if start is None else str(start.shift(t))


def kalman_filter(ssm: StateSpaceModel, ds: MixedFrequencyDataset) -> FilterOutput:
    """Filter the factor through a dataset, skipping missing cells."""
    return filter_values(ssm, standardize(ssm, ds), ds.start)


def kalman_smoother(ssm: StateSpaceModel, ds: MixedFrequencyDataset) -> SmootherOutput:
    """Smooth the factor through a dataset, skipping missing cells."""
    return smooth_values(ssm, standardize(ssm, ds), ds.start)


def column_moments(ds: MixedFrequencyDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Return the mean and deviation of the observed cells of every column."""
    means = np.empty(len(ds.columns))
    scales = np.empty(len(ds.columns))

    for j, column in enumerate(ds.columns):
        observed = ds.values[~np.isnan(ds.values[:, j]), j]
        if len(observed) < MIN_OBSERVATIONS:
            raise DataError(
                f"Factor estimation needs at least {MIN_OBSERVATIONS} observations "
                f"per column, got {len(observed)}.",
                column,
            )
        means[j] = observed.mean()
        scales[j] = observed.std()
        if scales[j] == 0:
            raise DataError("Constant column can't be standardized.", column)

    return means, scales


def default_init(ds: MixedFrequencyDataset) -> StateSpaceModel:
    """Initialize from the first principal component of the standardized data."""
    means, scales = column_moments(ds)
    y = (ds.values - means) / scales
    filled = np.where(np.isnan(y), 0.0, y)

    u, s, _ = np.linalg.svd(filled, full_matrices=False)
    component = u[:, 0] * s[0]
    component = component / component.std()

    loadings = np.empty(len(ds.columns))
    variances = np.empty(len(ds.columns))
    for j in range(len(ds.columns)):
        observed = ~np.isnan(y[:, j])
        f = component[observed]
        loadings[j] = y[observed, j] @ f / (f @ f)
        residuals = y[observed, j] - loadings[j] * f
        variances[j] = max(float(residuals.var()), INIT_VARIANCE_FLOOR)

    return StateSpaceModel(
        columns=ds.columns,
        loadings=loadings,
        phi=INIT_PHI,
        factor_variance=1 - INIT_PHI**2,
        idiosyncratic_variances=variances,
        means=means,
        scales=scales,
        target=ds.target,
        frequencies=ds.frequencies,
    ).canonical()


def factor_profile(
    phi: float, second: np.ndarray, cross: np.ndarray
) -> Tuple[float, float]:
    """Return the innovation variance maximizing the expected factor likelihood at phi,
    together with the corresponding expected log-likelihood up to a constant."""
    n_rows = len(second)
    total = (1 - phi**2) * second[0]
    total += np.sum(second[1:] - 2 * phi * cross + phi**2 * second[:-1])
    variance = total / n_rows
    if not variance > 0:
        return variance, -np.inf
    return variance, -0.5 * (n_rows * np.log(variance) - np.log(1 - phi**2) + n_rows)


def em_step(
    ssm: StateSpaceModel,
    y: np.ndarray,
    smoothed: SmootherOutput,
    iteration: int = 0,
) -> StateSpaceModel:
    """Maximize the expected complete-data likelihood given smoothed moments."""
    mean = smoothed.smoothed_mean
    second = mean**2 + smoothed.smoothed_variance
    cross = mean[1:] * mean[:-1] + smoothed.lag_one_covariance

    loadings = np.empty(len(ssm.columns))
    variances = np.empty(len(ssm.columns))

    for j in range(len(ssm.columns)):
        observed = ~np.isnan(y[:, j])
        values = y[observed, j]
        loadings[j] = values @ mean[observed] / second[observed].sum()
        variances[j] = np.mean(
            values**2
            - 2 * loadings[j] * values * mean[observed]
            + loadings[j] ** 2 * second[observed]
        )

    if not (variances > MIN_VARIANCE).all():
        column = ssm.columns[int(np.argmin(variances))]
        raise EstimationError(
            f"Idiosyncratic variance of {column!r} collapsed.",
            iteration,
            [],
        )

    result = minimize_scalar(
        lambda phi: -factor_profile(phi, second, cross)[1],
        bounds=(-MAX_PHI, MAX_PHI),
        method="bounded",
    )
    phi = float(result.x)
    candidate = factor_profile(phi, second, cross)[1]
    if candidate < factor_profile(ssm.phi, second, cross)[1]:
        phi = ssm.phi

    factor_variance, _ = factor_profile(phi, second, cross)
    if not factor_variance > MIN_VARIANCE:
        raise EstimationError("Factor innovation variance collapsed.", iteration, [])

    return replace(
        ssm,
        loadings=loadings * np.sqrt(factor_variance),
        phi=phi,
        factor_variance=1.0,
        idiosyncratic_variances=variances,
    )


def em_fit(
    ds: MixedFrequencyDataset,
    init: Union[StateSpaceModel, Literal["default"]] = "default",
    max_iter: int = 200,
    tol: float = 1e-4,
) -> StateSpaceModel:
    """Estimate the model by maximum likelihood with expectation maximization.

    Iteration stops when the relative log-likelihood improvement falls below
    `tol` or after `max_iter` E-steps. An explicit `init` is read in the
    standardized units of the dataset.
    """
    if len(ds.columns) < 2:
        raise DataError("Factor estimation needs at least 2 columns.")

    means, scales = column_moments(ds)

    if isinstance(init, StateSpaceModel):
        check_columns(init, ds)
        ssm = replace(
            init,
            means=means,
            scales=scales,
            target=ds.target,
            frequencies=ds.frequencies,
        )
    else:
        ssm = default_init(ds)

    y = (ds.values - means) / scales
    loglikelihoods: List[float] = []
    converged = False

    for iteration in range(1, max_iter + 1):
        smoothed = smooth_values(ssm, y, ds.start)
        loglikelihood = smoothed.loglikelihood
        logger.debug("EM iteration %d log-likelihood %.10g.", iteration, loglikelihood)

        if loglikelihoods:
            previous = loglikelihoods[-1]
            if loglikelihood < previous - MAX_DECREASE:
                raise EstimationError(
                    f"Log-likelihood decreased from {previous} to {loglikelihood}.",
                    iteration,
                    loglikelihoods + [loglikelihood],
                )
            average = (abs(loglikelihood) + abs(previous) + np.finfo(float).eps) / 2
            if abs(loglikelihood - previous) / average < tol:
                loglikelihoods.append(loglikelihood)
                converged = True
                break

        loglikelihoods.append(loglikelihood)

        try:
            ssm = em_step(ssm, y, smoothed, iteration)
        except EstimationError as exc:
            raise EstimationError(exc.message, iteration, loglikelihoods) from None

    if not converged:
        logger.warning("EM stopped after %d iterations without converging.", max_iter)

    fit = replace(
        ssm.canonical(),
        iterations=len(loglikelihoods),
        loglikelihoods=tuple(loglikelihoods),
    )
    logger.info(
        "Fitted factor model in %d iterations, log-likelihood %.6f.",
        fit.iterations,
        loglikelihoods[-1],
    )
    return fit


def dfm_nowcast(
    ssm: StateSpaceModel,
    vintage: MixedFrequencyDataset,
    target_period: Quarter,
) -> float:
    """Return the target loading times the smoothed factor at the quarter-end month."""
    check_columns(ssm, vintage)
    end = Quarter.parse(target_period).end
    row = vintage.row_of(end)

    if row < 0:
        raise DataError(
            f"Target {target_period} precedes the grid start {vintage.start}."
        )

    extended = vintage.extend_to(end)
    smoothed = kalman_smoother(ssm, extended)
    j = ssm.index_of(vintage.target)

    assert ssm.means is not None and ssm.scales is not None
    return float(
        ssm.means[j] + ssm.scales[j] * ssm.loadings[j] * smoothed.smoothed_mean[row]
    )
