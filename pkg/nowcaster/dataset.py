__all__ = [
    "Frequency",
    "Series",
    "MixedFrequencyDataset",
    "ColumnEdge",
    "RaggedEdgeProfile",
    "period_over_period_growth",
    "cumulate_growth",
    "align",
    "ragged_edge_profile",
    "expected_rows",
    "mask_by_profile",
]


import math
from dataclasses import dataclass, field, replace
from typing import (
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Literal,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np
import pandas as pd
from beet.core.utils import JsonDict

from .error import DataError
from .period import Period, period_range

Frequency = Literal["monthly", "quarterly"]

FREQUENCY_STEP: Dict[str, int] = {"monthly": 1, "quarterly": 3}


@dataclass(frozen=True)
class Series:
    """Single time series with observations keyed by monthly period."""

    id: str
    frequency: Frequency
    observations: Mapping[Period, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.frequency not in FREQUENCY_STEP:
            raise DataError(f"Invalid frequency {self.frequency!r}.", self.id)

        ordered: Dict[Period, float] = {}

        for period in sorted(self.observations):
            value = float(self.observations[period])
            if not math.isfinite(value):
                raise DataError("Non-finite observation.", self.id, period)
            if self.frequency == "quarterly" and not period.is_quarter_end:
                raise DataError(
                    "Quarterly observation outside quarter-end month.",
                    self.id,
                    period,
                )
            ordered[Period(*period)] = value

        object.__setattr__(self, "observations", ordered)

    @property
    def step(self) -> int:
        """Return the number of months between consecutive periods."""
        return FREQUENCY_STEP[self.frequency]

    def __len__(self) -> int:
        return len(self.observations)


def period_over_period_growth(levels: Series) -> Series:
    """Transform levels into period-over-period growth fractions."""
    if len(levels) < 2:
        raise DataError("At least 2 observations are required.", levels.id)

    growth: Dict[Period, float] = {}

    for period, value in levels.observations.items():
        previous = period.shift(-levels.step)
        if previous not in levels.observations:
            continue
        denominator = levels.observations[previous]
        if denominator == 0:
            raise DataError("Zero-valued predecessor.", levels.id, previous)
        growth[period] = value / denominator - 1

    if not growth:
        raise DataError("No consecutive pair of observations.", levels.id)

    return Series(levels.id, levels.frequency, growth)


def cumulate_growth(growth: Series, first: Period, level: float) -> Series:
    """Rebuild levels from growth rates, starting from a known first level."""
    levels = {first: level}
    period = first.shift(growth.step)

    while period in growth.observations:
        level = level * (1 + growth.observations[period])
        levels[period] = level
        period = period.shift(growth.step)

    return Series(growth.id, growth.frequency, levels)


@dataclass(frozen=True, eq=False)
class MixedFrequencyDataset:
    """Monthly grid of aligned series where NaN marks a missing cell."""

    start: Period
    columns: Tuple[str, ...]
    frequencies: Tuple[Frequency, ...]
    values: np.ndarray
    target: str

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise DataError(
                f"Grid of shape {values.shape} doesn't match "
                f"{len(self.columns)} columns."
            )
        if len(self.frequencies) != len(self.columns):
            raise DataError("Every column needs a frequency tag.")
        if len(set(self.columns)) != len(self.columns):
            raise DataError("Duplicate column ids.")
        if np.isinf(values).any():
            raise DataError("Grid contains infinite values.")
        if self.target not in self.columns:
            raise DataError("Target column is missing.", self.target)

        start = Period(*self.start)

        for j, (column, frequency) in enumerate(zip(self.columns, self.frequencies)):
            if frequency == "quarterly":
                for i in np.flatnonzero(~np.isnan(values[:, j])):
                    if not start.shift(int(i)).is_quarter_end:
                        raise DataError(
                            "Quarterly value outside quarter-end month.",
                            column,
                            start.shift(int(i)),
                        )

        if self.frequencies[self.columns.index(self.target)] != "quarterly":
            raise DataError("Target column must be quarterly.", self.target)

        values.flags.writeable = False
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "frequencies", tuple(self.frequencies))
        object.__setattr__(self, "values", values)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def stop(self) -> Period:
        """Return the last monthly period of the grid."""
        return self.start.shift(self.n_rows - 1)

    @property
    def periods(self) -> List[Period]:
        return list(period_range(self.start, self.stop))

    @property
    def mask(self) -> np.ndarray:
        """Return the boolean matrix of observed cells."""
        return ~np.isnan(self.values)

    @property
    def target_index(self) -> int:
        return self.columns.index(self.target)

    @property
    def feature_columns(self) -> Tuple[str, ...]:
        return tuple(c for c in self.columns if c != self.target)

    @property
    def feature_indices(self) -> List[int]:
        return [j for j, c in enumerate(self.columns) if c != self.target]

    def index_of(self, column: str) -> int:
        try:
            return self.columns.index(column)
        except ValueError:
            raise DataError("Unknown column.", column) from None

    def row_of(self, period: Period) -> int:
        """Return the row index of a period, which may lie outside the grid."""
        return period - self.start

    def column(self, column: str) -> np.ndarray:
        return self.values[:, self.index_of(column)]

    def frequency_of(self, column: str) -> Frequency:
        return self.frequencies[self.index_of(column)]

    def get(self, period: Period, column: str) -> Optional[float]:
        """Return the value of a cell, or None when missing or off-grid."""
        row = self.row_of(period)
        if not 0 <= row < self.n_rows:
            return None
        value = self.values[row, self.index_of(column)]
        return None if np.isnan(value) else float(value)

    def with_values(self, values: np.ndarray) -> "MixedFrequencyDataset":
        return replace(self, values=values)

    def extend_to(self, stop: Period) -> "MixedFrequencyDataset":
        """Append missing rows so that the grid reaches the given period."""
        extra = stop - self.stop
        if extra <= 0:
            return self
        padding = np.full((extra, len(self.columns)), np.nan)
        return self.with_values(np.vstack([self.values, padding]))

    def slice(self, start: Period, stop: Period) -> "MixedFrequencyDataset":
        """Return the rows between two periods, clipped to the grid."""
        first = max(self.row_of(start), 0)
        last = min(self.row_of(stop), self.n_rows - 1)
        if first > last:
            raise DataError(f"Empty slice {start} to {stop}.")
        return replace(
            self,
            start=self.start.shift(first),
            values=self.values[first : last + 1],
        )

    def select(self, columns: Sequence[str]) -> "MixedFrequencyDataset":
        """Return a dataset restricted to the given columns."""
        indices = [self.index_of(column) for column in columns]
        return replace(
            self,
            columns=tuple(columns),
            frequencies=tuple(self.frequencies[j] for j in indices),
            values=self.values[:, indices],
        )

    def series(self, column: str) -> Series:
        j = self.index_of(column)
        return Series(
            column,
            self.frequencies[j],
            {
                self.start.shift(int(i)): float(self.values[i, j])
                for i in np.flatnonzero(~np.isnan(self.values[:, j]))
            },
        )

    def observations(self) -> Iterator[Tuple[Period, str, float]]:
        """Yield every observed cell in row-major order."""
        for i, j in zip(*np.nonzero(self.mask)):
            yield self.start.shift(int(i)), self.columns[j], float(self.values[i, j])

    def to_frame(self) -> pd.DataFrame:
        """Return the grid as a dataframe indexed by monthly periods."""
        index = pd.period_range(str(self.start), str(self.stop), freq="M")
        return pd.DataFrame(self.values, index=index, columns=list(self.columns))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MixedFrequencyDataset):
            return NotImplemented
        return (
            self.start == other.start
            and self.columns == other.columns
            and self.frequencies == other.frequencies
            and self.target == other.target
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    def __hash__(self) -> int:
        return hash((self.start, self.columns, self.target, self.values.tobytes()))


def align(
    series_list: Iterable[Series],
    start: Period,
    stop: Period,
    target: str,
    truncate: bool = False,
) -> MixedFrequencyDataset:
    """Place series on a contiguous monthly grid spanning start to stop."""
    series_list = list(series_list)

    if stop < start:
        raise DataError(f"Empty range {start} to {stop}.")

    seen: set[str] = set()
    for series in series_list:
        if series.id in seen:
            raise DataError("Duplicate series id.", series.id)
        seen.add(series.id)

    values = np.full((stop - start + 1, len(series_list)), np.nan)

    for j, series in enumerate(series_list):
        for period, value in series.observations.items():
            if not start <= period <= stop:
                if truncate:
                    continue
                raise DataError("Observation outside range.", series.id, period)
            values[period - start, j] = value

    return MixedFrequencyDataset(
        start=start,
        columns=tuple(series.id for series in series_list),
        frequencies=tuple(series.frequency for series in series_list),
        values=values,
        target=target,
    )


@dataclass(frozen=True)
class ColumnEdge:
    """Observation pattern of one column."""

    first: Optional[Period]
    latest: Optional[Period]
    gaps: FrozenSet[Period] = frozenset()
    trailing: int = 0

    def to_json(self) -> JsonDict:
        return {
            "first": self.first and str(self.first),
            "latest": self.latest and str(self.latest),
            "gaps": sorted(map(str, self.gaps)),
            "trailing": self.trailing,
        }


@dataclass(frozen=True)
class RaggedEdgeProfile:
    """Per-column description of the missing cells of a dataset."""

    start: Period
    stop: Period
    columns: Dict[str, ColumnEdge]

    def __getitem__(self, column: str) -> ColumnEdge:
        return self.columns[column]

    def to_json(self) -> JsonDict:
        return {
            "start": str(self.start),
            "stop": str(self.stop),
            "columns": {name: edge.to_json() for name, edge in self.columns.items()},
        }


def expected_rows(frequency: Frequency, start: Period, n_rows: int) -> np.ndarray:
    """Return the boolean mask of rows where a column can carry values."""
    if frequency == "monthly":
        return np.ones(n_rows, dtype=bool)
    return np.array([start.shift(i).is_quarter_end for i in range(n_rows)])


def ragged_edge_profile(ds: MixedFrequencyDataset) -> RaggedEdgeProfile:
    """Enumerate first/latest observations, interior gaps and trailing edges."""
    columns: Dict[str, ColumnEdge] = {}

    for j, (column, frequency) in enumerate(zip(ds.columns, ds.frequencies)):
        expected = expected_rows(frequency, ds.start, ds.n_rows)
        observed = np.flatnonzero(~np.isnan(ds.values[:, j]))

        if not len(observed):
            columns[column] = ColumnEdge(None, None, trailing=int(expected.sum()))
            continue

        first, latest = int(observed[0]), int(observed[-1])
        missing = expected & np.isnan(ds.values[:, j])

        columns[column] = ColumnEdge(
            first=ds.start.shift(first),
            latest=ds.start.shift(latest),
            gaps=frozenset(
                ds.start.shift(int(i))
                for i in np.flatnonzero(missing[first + 1 : latest]) + first + 1
            ),
            trailing=int(expected[latest + 1 :].sum()),
        )

    return RaggedEdgeProfile(ds.start, ds.stop, columns)


def mask_by_profile(
    ds: MixedFrequencyDataset,
    profile: RaggedEdgeProfile,
) -> MixedFrequencyDataset:
    """Blank out every cell that the profile describes as missing."""
    values = ds.values.copy()

    for j, column in enumerate(ds.columns):
        edge = profile[column]
        expected = expected_rows(ds.frequencies[j], ds.start, ds.n_rows)
        values[~expected, j] = np.nan

        if edge.latest is None or edge.first is None:
            values[:, j] = np.nan
            continue

        values[: max(ds.row_of(edge.first), 0), j] = np.nan
        values[ds.row_of(edge.latest) + 1 :, j] = np.nan
        for period in edge.gaps:
            values[ds.row_of(period), j] = np.nan

    return ds.with_values(values)
