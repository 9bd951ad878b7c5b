__all__ = [
    "Diagnostic",
    "DiagnosticCollection",
    "IngestError",
]


from dataclasses import dataclass, field
from types import TracebackType
from typing import Iterator, List, Literal, Optional, Type

from beet.core.utils import JsonDict
from tokenstream import UNKNOWN_LOCATION, SourceLocation

from .error import NowcasterError


@dataclass
class Diagnostic(NowcasterError):
    """Exception that can be raised to report findings about input files."""

    level: Literal["info", "warn", "error"]
    message: str
    notes: List[str] = field(default_factory=list)

    filename: Optional[str] = None
    location: SourceLocation = UNKNOWN_LOCATION

    def __str__(self) -> str:
        return self.message

    def format_location(self) -> str:
        """Return the formatted location of the reported message."""
        if self.filename:
            location = self.filename
            if not self.location.unknown:
                location += f":{self.location.lineno}"
        elif not self.location.unknown:
            location = f"line {self.location.lineno}"
        else:
            location = ""
        return location

    def to_json(self) -> JsonDict:
        return {
            "level": self.level,
            "message": self.message,
            "filename": self.filename,
            "line": None if self.location.unknown else self.location.lineno,
            "notes": self.notes,
        }


@dataclass
class DiagnosticCollection(NowcasterError):
    """Exception that can be raised to group multiple diagnostics."""

    exceptions: List[Diagnostic] = field(default_factory=list)

    filename: Optional[str] = None

    def add(self, exc: Diagnostic) -> Diagnostic:
        """Add diagnostic."""
        if not exc.filename:
            exc.filename = self.filename
        self.exceptions.append(exc)
        return exc

    def extend(self, other: "DiagnosticCollection"):
        """Combine diagnostics from another collection."""
        self.exceptions.extend(other.exceptions)

    def error(self, message: str, line: Optional[int] = None) -> Diagnostic:
        location = UNKNOWN_LOCATION if line is None else SourceLocation(0, line, 1)
        return self.add(Diagnostic("error", message, location=location))

    def warn(self, message: str, notes: Optional[List[str]] = None) -> Diagnostic:
        return self.add(Diagnostic("warn", message, notes or []))

    @property
    def has_errors(self) -> bool:
        """Return true if the diagnostics contain at least one error."""
        return any(exc.level == "error" for exc in self.exceptions)

    def get_all_errors(self) -> Iterator[Diagnostic]:
        """Yield all the diagnostics with a severity level of "error"."""
        for exc in self.exceptions:
            if exc.level == "error":
                yield exc

    def get_all_warnings(self) -> Iterator[Diagnostic]:
        for exc in self.exceptions:
            if exc.level == "warn":
                yield exc

    def to_json(self) -> JsonDict:
        return {"diagnostics": [exc.to_json() for exc in self.exceptions]}

    def __enter__(self) -> "DiagnosticCollection":
        return self

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ):
        if not exc_type:
            if self.has_errors:
                raise IngestError(self)

    def __str__(self) -> str:
        count = sum(1 for _ in self.get_all_errors())
        return f"Reported {count} error{'s' * (count != 1)}."


class IngestError(NowcasterError):
    """Raised with a collection of error diagnostics."""

    diagnostics: DiagnosticCollection

    def __init__(self, diagnostics: DiagnosticCollection):
        super().__init__(diagnostics)
        self.diagnostics = diagnostics

    def details(self) -> JsonDict:
        return {
            "diagnostics": [
                exc.to_json() for exc in self.diagnostics.get_all_errors()
            ]
        }

    def __str__(self) -> str:
        details = "\n".join(
            f"{diagnostic.format_location()}: {diagnostic.message}"
            for diagnostic in self.diagnostics.get_all_errors()
        )
        return f"{self.diagnostics}\n\n{details}"
