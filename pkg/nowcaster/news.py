"""Attribution of nowcast revisions to new data releases and data revisions."""

__all__ = [
    "Nowcaster",
    "NewCells",
    "NewsDecomposition",
    "new_data_cells",
    "decompose",
]


import logging
from dataclasses import dataclass, field
from datetime import date
from typing import Dict, FrozenSet, Optional, Protocol, Tuple

import numpy as np
from beet.core.utils import JsonDict

from .dataset import MixedFrequencyDataset
from .error import NewsError, NowcasterError
from .period import Period, Quarter

logger = logging.getLogger("news")


MIN_DENOMINATOR = 1e-12
RESCALE_WARNING = 0.5


class Nowcaster(Protocol):
    """Black-box model nowcasting a target quarter from a vintage snapshot."""

    def predict(self, ds: MixedFrequencyDataset, target_period: Quarter) -> float:
        ...


@dataclass(frozen=True)
class NewCells:
    """Per-column cells released or revised between two vintages."""

    new: Dict[str, FrozenSet[Period]] = field(default_factory=dict)
    revised: Dict[str, FrozenSet[Period]] = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not any(self.new.values()) and not any(self.revised.values())


@dataclass(frozen=True)
class NewsDecomposition:
    """Contributions explaining the change between two nowcasts."""

    target_period: Quarter
    prediction_old: float
    prediction_new: float
    contributions: Dict[str, float]
    revision_contribution: float
    rescale_factor: float
    rescaled_contributions: Dict[str, float]
    rescaled_revision: float
    old_date: Optional[date] = None
    new_date: Optional[date] = None

    @property
    def delta(self) -> float:
        return self.prediction_new - self.prediction_old

    def to_json(self) -> JsonDict:
        return {
            "old_date": self.old_date and self.old_date.isoformat(),
            "new_date": self.new_date and self.new_date.isoformat(),
            "target_period": str(self.target_period),
            "prediction_old": self.prediction_old,
            "prediction_new": self.prediction_new,
            "delta": self.delta,
            "contributions": self.contributions,
            "revision_contribution": self.revision_contribution,
            "rescale_factor": self.rescale_factor,
            "rescaled_contributions": self.rescaled_contributions,
            "rescaled_revision": self.rescaled_revision,
        }


def common_grid(
    old: MixedFrequencyDataset,
    new: MixedFrequencyDataset,
) -> Tuple[MixedFrequencyDataset, MixedFrequencyDataset]:
    """Extend both vintages to the same rows."""
    if old.columns != new.columns or old.target != new.target:
        raise NewsError(
            f"Vintages have different columns {list(old.columns)} and {list(new.columns)}."
        )
    if old.start != new.start:
        raise NewsError(
            f"Vintages start at different periods {old.start} and {new.start}."
        )

    stop = max(old.stop, new.stop)
    return old.extend_to(stop), new.extend_to(stop)


def new_data_cells(old: MixedFrequencyDataset, new: MixedFrequencyDataset) -> NewCells:
    """Find cells observed only in the new vintage and cells whose value changed."""
    old, new = common_grid(old, new)
    old_mask = old.mask
    new_mask = new.mask

    released = new_mask & ~old_mask
    both = new_mask & old_mask
    changed = np.zeros_like(both)
    changed[both] = old.values[both] != new.values[both]

    def cells(matrix: np.ndarray, j: int) -> FrozenSet[Period]:
        return frozenset(new.start.shift(int(i)) for i in np.flatnonzero(matrix[:, j]))

    return NewCells(
        new={column: cells(released, j) for j, column in enumerate(new.columns)},
        revised={column: cells(changed, j) for j, column in enumerate(new.columns)},
    )


def decompose(
    model: Nowcaster,
    old: MixedFrequencyDataset,
    new: MixedFrequencyDataset,
    target_period: Quarter,
    old_date: Optional[date] = None,
    new_date: Optional[date] = None,
) -> NewsDecomposition:
    """Withhold the new data of every variable in turn and rescale to the delta."""
    target_period = Quarter.parse(target_period)
    old, new = common_grid(old, new)
    released = new.mask & ~old.mask

    def run(ds: MixedFrequencyDataset, variable: Optional[str] = None) -> float:
        try:
            return model.predict(ds, target_period)
        except NowcasterError as exc:
            message = f"Counterfactual prediction failed: {exc}"
            raise NewsError(message, variable) from exc

    prediction_old = run(old)
    prediction_new = run(new)

    contributions: Dict[str, float] = {}

    for j, column in sorted(enumerate(new.columns), key=lambda item: item[1]):
        if not released[:, j].any():
            contributions[column] = 0.0
            continue
        values = new.values.copy()
        values[released[:, j], j] = np.nan
        contributions[column] = prediction_new - run(new.with_values(values), column)

    restricted = np.where(old.mask, new.values, np.nan)
    revision_contribution = run(new.with_values(restricted)) - prediction_old

    delta = prediction_new - prediction_old
    denominator = sum(contributions.values()) + revision_contribution

    if abs(denominator) > MIN_DENOMINATOR:
        rescale_factor = delta / denominator
        rescaled = {
            column: raw * rescale_factor for column, raw in contributions.items()
        }
        rescaled_revision = revision_contribution * rescale_factor
    else:
        rescale_factor = 1.0
        rescaled = {column: 0.0 for column in contributions}
        rescaled_revision = 0.0
        if delta:
            logger.warning(
                "Raw contributions cancel out but the nowcast moved by %.6g.", delta
            )

    if abs(rescale_factor - 1) > RESCALE_WARNING:
        logger.warning("Rescale factor %.4f is far from 1.", rescale_factor)

    logger.info(
        "Decomposed %s nowcast change %.6g (rescale factor %.4f).",
        target_period,
        delta,
        rescale_factor,
    )

    return NewsDecomposition(
        target_period=target_period,
        prediction_old=prediction_old,
        prediction_new=prediction_new,
        contributions=contributions,
        revision_contribution=revision_contribution,
        rescale_factor=rescale_factor,
        rescaled_contributions=rescaled,
        rescaled_revision=rescaled_revision,
        old_date=old_date,
        new_date=new_date,
    )
