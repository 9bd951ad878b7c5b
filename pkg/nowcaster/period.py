__all__ = [
    "Period",
    "Quarter",
    "period_range",
]


import re
from datetime import date
from typing import Iterator, NamedTuple, Union

PERIOD_REGEX = re.compile(r"^(\d{4})-(\d{2})$")
QUARTER_REGEX = re.compile(r"^(\d{4})\s*[Qq]([1-4])$")

QUARTER_END_MONTHS = (3, 6, 9, 12)


class Period(NamedTuple):
    """Monthly period identified by year and month."""

    year: int
    month: int

    @classmethod
    def parse(cls, value: Union[str, "Period"]) -> "Period":
        """Parse a `YYYY-MM` string."""
        if isinstance(value, Period):
            return value
        match = PERIOD_REGEX.match(value.strip())
        if not match or not 1 <= int(match[2]) <= 12:
            raise ValueError(f"Invalid monthly period {value!r}.")
        return cls(int(match[1]), int(match[2]))

    @classmethod
    def from_ordinal(cls, ordinal: int) -> "Period":
        year, month = divmod(ordinal, 12)
        return cls(year, month + 1)

    @classmethod
    def from_date(cls, day: date) -> "Period":
        return cls(day.year, day.month)

    @property
    def ordinal(self) -> int:
        """Return the number of months since year 0."""
        return self.year * 12 + self.month - 1

    @property
    def quarter(self) -> "Quarter":
        return Quarter(self.year, (self.month - 1) // 3 + 1)

    @property
    def is_quarter_end(self) -> bool:
        return self.month in QUARTER_END_MONTHS

    def shift(self, months: int) -> "Period":
        return Period.from_ordinal(self.ordinal + months)

    def __sub__(self, other: "Period") -> int:  # type: ignore
        return self.ordinal - other.ordinal

    def first_day(self) -> date:
        return date(self.year, self.month, 1)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


class Quarter(NamedTuple):
    """Calendar quarter identified by year and quarter number."""

    year: int
    quarter: int

    @classmethod
    def parse(cls, value: Union[str, "Quarter"]) -> "Quarter":
        """Parse a `YYYYQn` string."""
        if isinstance(value, Quarter):
            return value
        match = QUARTER_REGEX.match(value.strip())
        if not match:
            raise ValueError(f"Invalid quarter {value!r}.")
        return cls(int(match[1]), int(match[2]))

    @property
    def end(self) -> Period:
        """Return the quarter-end month."""
        return Period(self.year, self.quarter * 3)

    @property
    def start(self) -> Period:
        return Period(self.year, self.quarter * 3 - 2)

    def anchor(self) -> date:
        """Return the first day of the quarter's final month."""
        return self.end.first_day()

    def shift(self, quarters: int) -> "Quarter":
        year, index = divmod(self.year * 4 + self.quarter - 1 + quarters, 4)
        return Quarter(year, index + 1)

    def __str__(self) -> str:
        return f"{self.year:04d}Q{self.quarter}"


def period_range(start: Period, stop: Period) -> Iterator[Period]:
    """Yield every monthly period from start to stop inclusive."""
    for ordinal in range(start.ordinal, stop.ordinal + 1):
        yield Period.from_ordinal(ordinal)
