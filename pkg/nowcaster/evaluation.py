"""Pseudo real-time replay and comparison metrics."""

__all__ = [
    "CurvePoint",
    "PredictionCurve",
    "TTestResult",
    "RevisionStats",
    "BacktestResult",
    "ConstantNowcaster",
    "anchor",
    "day_difference",
    "replay",
    "mae",
    "rmse",
    "one_tailed_t_test",
    "significance_stars",
    "revision_stats",
    "evaluate",
    "curves_frame",
    "write_curves",
    "read_curves",
]


import logging
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from beet.core.utils import FileSystemPath, JsonDict
from scipy import stats

from .dataset import MixedFrequencyDataset
from .error import DegenerateTestError, EvaluationError
from .news import Nowcaster
from .period import Quarter
from .vintage import VintageStore

logger = logging.getLogger("backtest")


CURVE_COLUMNS = [
    "model",
    "target_period",
    "asof_date",
    "day_difference",
    "prediction",
    "actual",
]

SIGNIFICANCE_LEVELS = [(0.001, "***"), (0.01, "**"), (0.05, "*")]


class CurvePoint(NamedTuple):
    as_of: date
    day_difference: int
    prediction: float


def anchor(target_period: Quarter) -> date:
    """Return the first day of the final month of the quarter."""
    return Quarter.parse(target_period).anchor()


def day_difference(as_of: date, target_period: Quarter) -> int:
    return (as_of - anchor(target_period)).days


@dataclass(frozen=True)
class PredictionCurve:
    """Evolution of the nowcast of one model across vintages."""

    model: str
    target_period: Quarter
    points: Tuple[CurvePoint, ...]
    actual: Optional[float] = None

    def __post_init__(self):
        target_period = Quarter.parse(self.target_period)
        points = tuple(self.points)

        for previous, current in zip(points, points[1:]):
            if current.as_of <= previous.as_of:
                raise EvaluationError(
                    "Curve dates must be strictly increasing"
                    f" ({previous.as_of} >= {current.as_of})."
                )
        for point in points:
            if point.day_difference != day_difference(point.as_of, target_period):
                raise EvaluationError(
                    f"Day difference {point.day_difference} doesn't match {point.as_of}."
                )

        object.__setattr__(self, "target_period", target_period)
        object.__setattr__(self, "points", points)

    @property
    def dates(self) -> List[date]:
        return [point.as_of for point in self.points]

    @property
    def predictions(self) -> np.ndarray:
        return np.array([point.prediction for point in self.points])

    @property
    def errors(self) -> np.ndarray:
        """Return prediction minus actual at every point."""
        if self.actual is None:
            raise EvaluationError(
                f"Actual value of {self.target_period} is unknown for {self.model!r}."
            )
        if not self.points:
            raise EvaluationError(f"Curve of {self.model!r} is empty.")
        return self.predictions - self.actual

    def to_json(self) -> JsonDict:
        return {
            "model": self.model,
            "target_period": str(self.target_period),
            "actual": self.actual,
            "points": [
                {
                    "asof_date": point.as_of.isoformat(),
                    "day_difference": point.day_difference,
                    "prediction": point.prediction,
                }
                for point in self.points
            ],
        }


class TTestResult(NamedTuple):
    statistic: float
    df: int
    pvalue: float


class RevisionStats(NamedTuple):
    share_a_bigger: float
    share_b_bigger: float
    avg_abs_rev_a: float
    avg_abs_rev_b: float


@dataclass(frozen=True)
class ConstantNowcaster:
    """Benchmark that always predicts the same value."""

    value: float

    def predict(self, ds: MixedFrequencyDataset, target_period: Quarter) -> float:
        return self.value


def replay(
    store: VintageStore,
    models: Mapping[str, Nowcaster],
    target_period: Quarter,
    window_days: int = 100,
    actual: Optional[float] = None,
) -> List[PredictionCurve]:
    """Nowcast the target from every vintage dated within the window around the anchor.

    The actual value defaults to the target observation of the latest snapshot.
    """
    target_period = Quarter.parse(target_period)

    if not len(store):
        raise EvaluationError("Empty vintage store.")
    if window_days <= 0:
        raise EvaluationError(f"Window must be positive, got {window_days} days.")

    center = anchor(target_period)
    window = timedelta(days=window_days)
    snapshots = list(store.between(center - window, center + window))

    if not snapshots:
        raise EvaluationError(
            f"No vintage within {window_days} days of {center} for {target_period}."
        )

    if actual is None:
        actual = store.latest.get(target_period.end, store.target)

    curves: List[PredictionCurve] = []

    for name, model in models.items():
        points = [
            CurvePoint(
                as_of,
                day_difference(as_of, target_period),
                model.predict(ds, target_period),
            )
            for as_of, ds in snapshots
        ]
        curves.append(PredictionCurve(name, target_period, tuple(points), actual))

    logger.info(
        "Replayed %d vintages for %s with %d models.",
        len(snapshots),
        target_period,
        len(models),
    )
    return curves


def mae(curve: PredictionCurve) -> float:
    """Return the mean absolute error over every curve point."""
    return float(np.mean(np.abs(curve.errors)))


def rmse(curve: PredictionCurve) -> float:
    """Return the root mean squared error over every curve point."""
    return float(np.sqrt(np.mean(curve.errors**2)))


def check_pairing(curve_a: PredictionCurve, curve_b: PredictionCurve):
    if curve_a.dates != curve_b.dates:
        raise EvaluationError(
            f"Curves {curve_a.model!r} and {curve_b.model!r}"
            " aren't on the same vintage dates."
        )


def one_tailed_t_test(
    errors_a: Sequence[float],
    errors_b: Sequence[float],
) -> TTestResult:
    """Paired t-test of the alternative that b has lower absolute errors than a."""
    abs_a = np.abs(np.asarray(errors_a, dtype=float))
    abs_b = np.abs(np.asarray(errors_b, dtype=float))

    if abs_a.shape != abs_b.shape:
        raise EvaluationError(
            f"Paired errors have lengths {len(abs_a)} and {len(abs_b)}."
        )
    if len(abs_a) < 3:
        raise EvaluationError(
            f"Paired t-test needs at least 3 pairs, got {len(abs_a)}."
        )

    differences = abs_b - abs_a
    if np.ptp(differences) == 0:
        raise DegenerateTestError("Paired differences have zero variance.")

    result = stats.ttest_rel(abs_b, abs_a, alternative="less")
    statistic, pvalue = float(result.statistic), float(result.pvalue)
    return TTestResult(statistic, len(differences) - 1, pvalue)


def significance_stars(pvalue: float) -> str:
    for level, stars in SIGNIFICANCE_LEVELS:
        if pvalue < level:
            return stars
    return ""


def revision_stats(curve_a: PredictionCurve, curve_b: PredictionCurve) -> RevisionStats:
    """Compare the week-to-week revisions of two curves on the same dates."""
    check_pairing(curve_a, curve_b)
    if len(curve_a.points) < 2:
        raise EvaluationError("Revision statistics need at least 2 points.")

    revisions_a = np.abs(np.diff(curve_a.predictions))
    revisions_b = np.abs(np.diff(curve_b.predictions))

    return RevisionStats(
        share_a_bigger=float(np.mean(revisions_a > revisions_b)),
        share_b_bigger=float(np.mean(revisions_b > revisions_a)),
        avg_abs_rev_a=float(revisions_a.mean()),
        avg_abs_rev_b=float(revisions_b.mean()),
    )


@dataclass(frozen=True)
class BacktestResult:
    """Curves and comparison metrics of every model for one target quarter."""

    target_period: Quarter
    curves: Dict[str, PredictionCurve]
    mae: Dict[str, float]
    rmse: Dict[str, float]
    t_test: Optional[TTestResult] = None
    revisions: Optional[RevisionStats] = None
    baseline: str = "dfm"
    challenger: str = "lstm"
    benchmark: Optional[str] = None

    def to_json(self) -> JsonDict:
        models = [model for model in self.curves if model != self.benchmark]
        return {
            "target_period": str(self.target_period),
            "models": models,
            "mae": {model: self.mae[model] for model in models},
            "rmse": {model: self.rmse[model] for model in models},
            "benchmark": self.benchmark and {
                "model": self.benchmark,
                "mae": self.mae[self.benchmark],
                "rmse": self.rmse[self.benchmark],
            },
            "t_test": self.t_test and {
                "a": self.baseline,
                "b": self.challenger,
                "paired": True,
                "alternative": "b has lower absolute errors",
                "statistic": self.t_test.statistic,
                "df": self.t_test.df,
                "pvalue": self.t_test.pvalue,
                "stars": significance_stars(self.t_test.pvalue),
            },
            "revisions": self.revisions and {
                "a": self.baseline,
                "b": self.challenger,
                **self.revisions._asdict(),
            },
            "curves": [curve.to_json() for curve in self.curves.values()],
        }


def evaluate(
    curves: Sequence[PredictionCurve],
    baseline: str = "dfm",
    challenger: str = "lstm",
    benchmark: Optional[str] = None,
) -> BacktestResult:
    """Score every curve and test the challenger against the baseline.

    The benchmark curve is scored but reported apart from the models.
    """
    if not curves:
        raise EvaluationError("No curve to evaluate.")

    by_model = {curve.model: curve for curve in curves}
    target_period = curves[0].target_period
    reference = curves[0]

    for curve in curves:
        if curve.target_period != target_period:
            raise EvaluationError("Curves target different quarters.")
        check_pairing(reference, curve)

    t_test = None
    revisions = None

    if baseline in by_model and challenger in by_model:
        a, b = by_model[baseline], by_model[challenger]
        try:
            t_test = one_tailed_t_test(a.errors, b.errors)
        except DegenerateTestError:
            logger.warning("Skipped degenerate t-test for %s.", target_period)
        except EvaluationError as exc:
            logger.warning("Skipped t-test for %s: %s", target_period, exc)
        if len(a.points) >= 2:
            revisions = revision_stats(a, b)

    return BacktestResult(
        target_period=target_period,
        curves=by_model,
        mae={name: mae(curve) for name, curve in by_model.items()},
        rmse={name: rmse(curve) for name, curve in by_model.items()},
        t_test=t_test,
        revisions=revisions,
        baseline=baseline,
        challenger=challenger,
        benchmark=benchmark if benchmark in by_model else None,
    )


def curves_frame(curves: Sequence[PredictionCurve]) -> pd.DataFrame:
    """Return the tidy table of every curve point."""
    rows = [
        (
            curve.model,
            str(curve.target_period),
            point.as_of.isoformat(),
            point.day_difference,
            point.prediction,
            curve.actual,
        )
        for curve in curves
        for point in curve.points
    ]
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def write_curves(
    curves: Sequence[PredictionCurve],
    path: FileSystemPath,
    header: Optional[Mapping[str, object]] = None,
):
    """Write the curve table as csv preceded by `# key=value` comment lines."""
    with Path(path).open("w", newline="") as fileobj:
        for key, value in (header or {}).items():
            fileobj.write(f"# {key}={value}\n")
        curves_frame(curves).to_csv(fileobj, index=False)


def read_curves(path: FileSystemPath) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")
