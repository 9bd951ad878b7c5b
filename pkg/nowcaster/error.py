__all__ = [
    "NowcasterError",
    "DataError",
    "VintageError",
    "ImputationError",
    "ArmaFitError",
    "DegenerateFitError",
    "ShapeError",
    "ModelFileError",
    "TrainingError",
    "FilterError",
    "EstimationError",
    "NewsError",
    "EvaluationError",
    "DegenerateTestError",
]


from typing import Any, Optional, Sequence

from beet.core.utils import JsonDict


class NowcasterError(Exception):
    """Base class for all nowcaster errors."""

    def details(self) -> JsonDict:
        """Return the structured fields attached to the error."""
        return {}

    def to_json(self) -> JsonDict:
        """Return the machine-readable representation of the error."""
        return {
            "error": self.__class__.__name__,
            "message": str(self),
            **self.details(),
        }


class DataError(NowcasterError):
    """Raised when series or datasets violate their invariants."""

    message: str
    series: Optional[str]
    period: Optional[str]

    def __init__(
        self,
        message: str,
        series: Optional[str] = None,
        period: Optional[Any] = None,
    ):
        super().__init__(message, series, period)
        self.message = message
        self.series = series
        self.period = None if period is None else str(period)

    def details(self) -> JsonDict:
        return {"series": self.series, "period": self.period}

    def __str__(self) -> str:
        location = ", ".join(
            part
            for part in [
                self.series and f"series {self.series!r}",
                self.period and f"period {self.period}",
            ]
            if part
        )
        return f"{self.message} ({location})" if location else self.message


class VintageError(NowcasterError):
    """Raised when a vintage store can't satisfy a request."""


class ImputationError(NowcasterError):
    """Raised when a column can't be filled."""

    column: str
    reason: str

    def __init__(self, column: str, reason: str):
        super().__init__(column, reason)
        self.column = column
        self.reason = reason

    def details(self) -> JsonDict:
        return {"column": self.column}

    def __str__(self) -> str:
        return f"Couldn't fill column {self.column!r}: {self.reason}"


class ArmaFitError(NowcasterError):
    """Raised when the ARMA optimizer stops without converging."""

    message: str
    best: Any

    def __init__(self, message: str, best: Any = None):
        super().__init__(message, best)
        self.message = message
        self.best = best

    def __str__(self) -> str:
        return self.message


class DegenerateFitError(ArmaFitError):
    """Raised when the series carries no innovation variance."""


class ShapeError(NowcasterError):
    """Raised when array dimensions don't line up."""


class ModelFileError(NowcasterError):
    """Raised when a persisted model can't be read."""


class TrainingError(NowcasterError):
    """Raised when a network diverges during training."""

    epoch: int
    member: int

    def __init__(self, epoch: int, member: int, loss: float):
        super().__init__(epoch, member, loss)
        self.epoch = epoch
        self.member = member
        self.loss = loss

    def details(self) -> JsonDict:
        return {"epoch": self.epoch, "member": self.member}

    def __str__(self) -> str:
        return (
            f"Non-finite loss {self.loss} at epoch {self.epoch} "
            f"while training member {self.member}."
        )


class FilterError(NowcasterError):
    """Raised when the Kalman recursions produce non-finite values."""

    period: str

    def __init__(self, period: Any, quantity: str):
        super().__init__(period, quantity)
        self.period = str(period)
        self.quantity = quantity

    def details(self) -> JsonDict:
        return {"period": self.period}

    def __str__(self) -> str:
        return f"Non-finite {self.quantity} at period {self.period}."


class EstimationError(NowcasterError):
    """Raised when EM estimation breaks its guarantees."""

    message: str
    iteration: int
    loglikelihoods: Sequence[float]

    def __init__(self, message: str, iteration: int, loglikelihoods: Sequence[float]):
        super().__init__(message, iteration)
        self.message = message
        self.iteration = iteration
        self.loglikelihoods = list(loglikelihoods)

    def details(self) -> JsonDict:
        return {"iteration": self.iteration, "loglikelihoods": self.loglikelihoods}

    def __str__(self) -> str:
        return f"{self.message} (iteration {self.iteration})"


class NewsError(NowcasterError):
    """Raised when a counterfactual prediction fails."""

    variable: Optional[str]

    def __init__(self, message: str, variable: Optional[str] = None):
        super().__init__(message, variable)
        self.message = message
        self.variable = variable

    def details(self) -> JsonDict:
        return {"variable": self.variable}

    def __str__(self) -> str:
        if self.variable:
            return f"{self.message} (variable {self.variable!r})"
        return self.message


class EvaluationError(NowcasterError):
    """Raised when curves can't be scored or compared."""


class DegenerateTestError(EvaluationError):
    """Raised when the paired differences have zero variance."""
