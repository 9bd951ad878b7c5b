__all__ = [
    "VintageStore",
    "vintage_at",
    "SnapshotRecords",
    "read_snapshot",
    "read_vintage_store",
    "write_snapshot",
    "write_vintage_store",
    "check_monotone",
]


import logging
import math
import re
from bisect import bisect_right
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Collection, Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from beet.core.utils import FileSystemPath

from .dataset import Frequency, MixedFrequencyDataset, Series, align
from .diagnostic import DiagnosticCollection
from .error import VintageError
from .period import PERIOD_REGEX, Period

logger = logging.getLogger("ingest")


SNAPSHOT_FILENAME_REGEX = re.compile(r"^(\d{4}-\d{2}-\d{2})\.csv$")
SNAPSHOT_HEADER = ["date", "series_id", "value"]

SnapshotRecords = Dict[str, Dict[Period, float]]


@dataclass(frozen=True)
class VintageStore:
    """Ordered collection of dated dataset snapshots."""

    snapshots: Tuple[Tuple[date, MixedFrequencyDataset], ...]

    def __post_init__(self):
        snapshots = tuple(self.snapshots)
        for (previous, first), (current, ds) in zip(snapshots, snapshots[1:]):
            if current <= previous:
                raise VintageError(
                    f"As-of dates must be strictly increasing ({previous} >= {current})."
                )
            if ds.columns != first.columns or ds.target != first.target:
                raise VintageError(
                    f"Snapshot {current} doesn't share the columns of {previous}."
                )
        object.__setattr__(self, "snapshots", snapshots)

    @classmethod
    def from_mapping(cls, snapshots: Mapping[date, MixedFrequencyDataset]):
        return cls(tuple(sorted(snapshots.items(), key=lambda item: item[0])))

    @property
    def dates(self) -> List[date]:
        return [day for day, _ in self.snapshots]

    @property
    def columns(self) -> Tuple[str, ...]:
        return self.latest.columns

    @property
    def target(self) -> str:
        return self.latest.target

    @property
    def latest(self) -> MixedFrequencyDataset:
        if not self.snapshots:
            raise VintageError("Empty vintage store.")
        return self.snapshots[-1][1]

    def __len__(self) -> int:
        return len(self.snapshots)

    def __iter__(self) -> Iterator[Tuple[date, MixedFrequencyDataset]]:
        return iter(self.snapshots)

    def resolve(self, day: date) -> date:
        """Return the as-of date of the snapshot in force on the given day."""
        if not self.snapshots:
            raise VintageError("Empty vintage store.")
        index = bisect_right(self.dates, day)
        if index == 0:
            raise VintageError(
                f"Requested date {day} precedes the first snapshot {self.dates[0]}."
            )
        return self.snapshots[index - 1][0]

    def between(
        self, first: date, last: date
    ) -> Iterator[Tuple[date, MixedFrequencyDataset]]:
        """Yield the snapshots dated within the inclusive interval."""
        for day, ds in self.snapshots:
            if first <= day <= last:
                yield day, ds


def vintage_at(store: VintageStore, day: date) -> MixedFrequencyDataset:
    """Return the snapshot with the greatest as-of date not after the given day."""
    return dict(store.snapshots)[store.resolve(day)]


def read_snapshot(
    path: FileSystemPath,
    diagnostics: DiagnosticCollection,
) -> SnapshotRecords:
    """Parse one snapshot file, reporting malformed rows as diagnostics."""
    path = Path(path)
    records: SnapshotRecords = {}

    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False).fillna("")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        diagnostics.error(f"Unparseable file: {exc}")
        return records

    if list(frame.columns) != SNAPSHOT_HEADER:
        diagnostics.error(
            f"Expected header {','.join(SNAPSHOT_HEADER)!r} "
            f"but got {','.join(map(str, frame.columns))!r}.",
            line=1,
        )
        return records

    for offset, (raw_date, series_id, raw_value) in enumerate(
        frame.itertuples(index=False, name=None)
    ):
        line = offset + 2

        if not PERIOD_REGEX.match(raw_date):
            diagnostics.error(f"Invalid period {raw_date!r}.", line)
            continue
        try:
            period = Period.parse(raw_date)
        except ValueError as exc:
            diagnostics.error(str(exc), line)
            continue

        if not series_id:
            diagnostics.error("Empty series id.", line)
            continue

        try:
            value = float(raw_value)
        except ValueError:
            diagnostics.error(f"Non-numeric value {raw_value!r}.", line)
            continue
        if not math.isfinite(value):
            diagnostics.error(f"Non-finite value {raw_value!r}.", line)
            continue

        observations = records.setdefault(series_id, {})
        if period in observations:
            message = f"Duplicate observation for {series_id!r} at {period}."
            diagnostics.error(message, line)
            continue
        observations[period] = value

    return records


def infer_frequencies(
    snapshots: Collection[SnapshotRecords],
    quarterly: Collection[str] = (),
) -> Dict[str, Frequency]:
    """Tag series observed in quarter-end months only as quarterly."""
    frequencies: Dict[str, Frequency] = {}

    for records in snapshots:
        for series_id, observations in records.items():
            if series_id in quarterly:
                frequencies[series_id] = "quarterly"
            elif frequencies.get(series_id) != "monthly":
                frequencies[series_id] = (
                    "quarterly"
                    if all(period.is_quarter_end for period in observations)
                    else "monthly"
                )

    return frequencies


def read_vintage_store(
    directory: FileSystemPath,
    target: str,
    quarterly: Collection[str] = (),
    diagnostics: Optional[DiagnosticCollection] = None,
) -> VintageStore:
    """Load every `YYYY-MM-DD.csv` snapshot of a vintage directory."""
    directory = Path(directory)
    diagnostics = diagnostics if diagnostics is not None else DiagnosticCollection()

    if not directory.is_dir():
        raise VintageError(f"Vintage directory {str(directory)!r} doesn't exist.")

    parsed: Dict[date, SnapshotRecords] = {}

    for path in sorted(directory.glob("*.csv")):
        match = SNAPSHOT_FILENAME_REGEX.match(path.name)
        file_diagnostics = DiagnosticCollection(filename=str(path))

        if not match:
            file_diagnostics.error("Snapshot file name must be YYYY-MM-DD.csv.")
        else:
            try:
                as_of = date.fromisoformat(match[1])
            except ValueError:
                file_diagnostics.error(f"Invalid as-of date {match[1]!r}.")
            else:
                parsed[as_of] = read_snapshot(path, file_diagnostics)

        diagnostics.extend(file_diagnostics)

    if not parsed and not diagnostics.has_errors:
        diagnostics.error(f"No snapshot found in {str(directory)!r}.")

    with diagnostics:
        pass

    frequencies = infer_frequencies(parsed.values(), quarterly)

    if target not in frequencies:
        raise VintageError(f"Target series {target!r} doesn't appear in any snapshot.")

    columns = sorted(frequencies, key=lambda c: (c == target, c))
    periods = [
        period
        for records in parsed.values()
        for observations in records.values()
        for period in observations
    ]
    start = min(periods)

    snapshots: Dict[date, MixedFrequencyDataset] = {}

    for as_of, records in parsed.items():
        stop = max(
            (p for obs in records.values() for p in obs),
            default=start,
        )
        snapshots[as_of] = align(
            [Series(c, frequencies[c], records.get(c, {})) for c in columns],
            start,
            stop,
            target,
        )

    logger.info("Loaded %d snapshots from %s.", len(snapshots), directory)
    return VintageStore.from_mapping(snapshots)


def write_snapshot(ds: MixedFrequencyDataset, path: FileSystemPath):
    """Write a snapshot in the tidy `date,series_id,value` layout."""
    rows = [
        (str(period), column, repr(value))
        for period, column, value in ds.observations()
    ]
    rows.sort(key=lambda row: (row[1], row[0]))
    frame = pd.DataFrame(rows, columns=SNAPSHOT_HEADER)
    frame.to_csv(path, index=False)


def write_vintage_store(store: VintageStore, directory: FileSystemPath) -> List[Path]:
    """Write one csv file per snapshot inside the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    paths: List[Path] = []
    for as_of, ds in store:
        path = directory / f"{as_of.isoformat()}.csv"
        write_snapshot(ds, path)
        paths.append(path)

    return paths


def check_monotone(store: VintageStore, diagnostics: DiagnosticCollection):
    """Warn about observed cells that vanish from a later snapshot."""
    for (previous, old), (current, new) in zip(store.snapshots, store.snapshots[1:]):
        rows = min(old.n_rows, new.n_rows)
        lost = old.mask[:rows] & ~new.mask[:rows]
        if old.n_rows > new.n_rows:
            lost_tail = old.mask[rows:]
        else:
            lost_tail = np.zeros((0, len(old.columns)), dtype=bool)

        cells = [
            f"{old.columns[j]}@{old.start.shift(int(i))}"
            for i, j in zip(*np.nonzero(np.vstack([lost, lost_tail])))
        ]

        if cells:
            diagnostics.warn(
                f"Snapshot {current} drops {len(cells)} cell(s) observed in {previous}.",
                notes=cells,
            )
