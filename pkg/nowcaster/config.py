"""Run configuration.

The configuration file holds one `KEY = VALUE` entry per line::

    # comment
    vintages = data/vintages
    target = target
    training.start = 2005Q2
    lstm.n_networks = 10      # trailing comments are allowed

Keys start with a letter or an underscore and may contain letters, digits,
underscores and dots. Dotted keys address nested settings. The value runs up
to the end of the line or the next `#`, surrounding blanks are stripped.
Blank lines are ignored, duplicate keys are rejected, lists are
comma-separated and an empty value leaves the default in place.
"""

__all__ = [
    "TrainingWindow",
    "RunConfig",
    "ConfigEntry",
    "ConfigError",
    "parse_config",
    "parse_override",
    "resolve_entries",
    "load_config",
    "config_hash",
]


import hashlib
import json
import re
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Type, TypeVar

from beet.core.utils import FileSystemPath, JsonDict
from pydantic.v1 import BaseModel, ValidationError, root_validator, validator
from tokenstream import UNKNOWN_LOCATION, InvalidSyntax, SourceLocation, TokenStream

from .dfm import DfmSettings
from .error import NowcasterError
from .imputation import FillMethod
from .lstm import LstmConfig
from .period import Quarter

ModelType = TypeVar("ModelType", bound=BaseModel)


KEY_REGEX = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")
ENTRY_PATTERN = r"[A-Za-z_][A-Za-z0-9_.]*[ \t]*=[^\n#]*"
COMMENT_PATTERN = r"#[^\n]*"


class ConfigError(NowcasterError):
    """Raised when a configuration can't be parsed or validated."""

    message: str
    location: SourceLocation
    filename: Optional[str]

    def __init__(
        self,
        message: str,
        location: SourceLocation = UNKNOWN_LOCATION,
        filename: Optional[str] = None,
    ):
        super().__init__(message, location, filename)
        self.message = message
        self.location = location
        self.filename = filename

    def details(self) -> JsonDict:
        return {
            "filename": self.filename,
            "line": None if self.location.unknown else self.location.lineno,
            "column": None if self.location.unknown else self.location.colno,
        }

    def __str__(self) -> str:
        if self.location.unknown:
            prefix = f"{self.filename}: " if self.filename else ""
        elif self.filename:
            prefix = f"{self.filename}:{self.location.lineno}:{self.location.colno}: "
        else:
            prefix = f"line {self.location.lineno}, column {self.location.colno}: "
        return prefix + self.message


class ConfigEntry(NamedTuple):
    value: str
    location: SourceLocation = UNKNOWN_LOCATION
    filename: Optional[str] = None


class TrainingWindow(BaseModel):
    """First and last target quarters used for training."""

    start: Quarter = Quarter(2005, 2)
    end: Quarter = Quarter(2019, 4)

    class Config:
        extra = "forbid"
        frozen = True

    @validator("start", "end", pre=True)
    def quarter_string(cls, value: Any):
        return Quarter.parse(value) if isinstance(value, str) else value

    @root_validator(skip_on_failure=True)
    def ordered(cls, values: Any):
        if values["start"] > values["end"]:
            start, end = values["start"], values["end"]
            raise ValueError(f"Training window starts after it ends ({start} > {end}).")
        return values


class RunConfig(BaseModel):
    """Resolved settings of a command invocation."""

    vintages: Optional[Path] = None
    target: str = "target"
    quarterly: List[str] = []
    training: TrainingWindow = TrainingWindow()
    train_asof: Optional[date] = None
    fill: FillMethod = FillMethod()
    lstm: LstmConfig = LstmConfig()
    dfm: DfmSettings = DfmSettings()
    window_days: int = 100
    output: Path = Path("output")
    seed: int = 0

    class Config:
        extra = "forbid"

    @validator("quarterly", pre=True)
    def comma_separated(cls, value: Any):
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @validator("fill", pre=True)
    def fill_string(cls, value: Any):
        return FillMethod.parse(value)

    @validator("window_days")
    def window_positive(cls, value: int):
        if value <= 0:
            raise ValueError("Window must be a positive number of days.")
        return value

    @root_validator(skip_on_failure=True)
    def sync_lstm(cls, values: Any):
        lstm: LstmConfig = values["lstm"]
        values["lstm"] = lstm.copy(
            update={"fill_method": values["fill"], "seed": values["seed"]}
        )
        return values

    def to_json(self) -> JsonDict:
        return {
            "vintages": self.vintages and str(self.vintages),
            "target": self.target,
            "quarterly": list(self.quarterly),
            "training": {
                "start": str(self.training.start),
                "end": str(self.training.end),
            },
            "train_asof": self.train_asof and self.train_asof.isoformat(),
            "fill": str(self.fill),
            "lstm": self.lstm.to_json(),
            "dfm": self.dfm.dict(),
            "window_days": self.window_days,
            "output": str(self.output),
            "seed": self.seed,
        }


def parse_config(source: str, filename: Optional[str] = None) -> Dict[str, ConfigEntry]:
    """Tokenize a configuration document into its entries."""
    stream = TokenStream(source)
    entries: Dict[str, ConfigEntry] = {}

    try:
        with stream.syntax(entry=ENTRY_PATTERN, comment=COMMENT_PATTERN):
            with stream.ignore("comment"):
                while stream.peek():
                    token = stream.expect("entry")
                    key, _, value = token.value.partition("=")
                    key = key.strip()
                    if key in entries:
                        raise ConfigError(
                            f"Duplicate key {key!r}.",
                            token.location,
                            filename,
                        )
                    entries[key] = ConfigEntry(value.strip(), token.location, filename)
    except InvalidSyntax as exc:
        raise ConfigError(str(exc), exc.location, filename) from None

    return entries


def parse_override(override: str) -> Dict[str, ConfigEntry]:
    """Parse a single `KEY=VALUE` override."""
    key, equal, value = override.partition("=")
    key = key.strip()
    if not equal or not KEY_REGEX.match(key):
        raise ConfigError(f"Invalid override {override!r}, expected KEY=VALUE.")
    return {key: ConfigEntry(value.strip(), filename="--set")}


def resolve_entries(
    model: Type[ModelType],
    entries: Dict[str, ConfigEntry],
) -> ModelType:
    """Build a settings model from flat dotted entries."""
    data: Dict[str, Any] = {}

    for key, entry in entries.items():
        if not entry.value:
            continue
        *parents, name = key.split(".")
        node = data
        for parent in parents:
            child = node.setdefault(parent, {})
            if not isinstance(child, dict):
                raise ConfigError(
                    f"Key {key!r} conflicts with a plain value.",
                    entry.location,
                    entry.filename,
                )
            node = child
        node[name] = entry.value

    try:
        return model.parse_obj(data)
    except ValidationError as exc:
        error = exc.errors()[0]
        key = ".".join(str(part) for part in error["loc"] if part != "__root__")
        entry = entries.get(key, ConfigEntry(""))
        reason = error["msg"].rstrip(".")
        message = f"Invalid value for {key!r}: {reason}." if key else f"{reason}."
        raise ConfigError(message, entry.location, entry.filename) from None


def load_config(
    path: Optional[FileSystemPath] = None,
    overrides: Sequence[str] = (),
    model: Type[ModelType] = RunConfig,
    **flags: Any,
) -> ModelType:
    """Resolve defaults, then the file, then overrides, then dedicated flags."""
    entries: Dict[str, ConfigEntry] = {}

    if path is not None:
        path = Path(path)
        try:
            source = path.read_text()
        except OSError as exc:
            raise ConfigError(
                f"Couldn't read configuration: {exc.strerror}.",
                filename=str(path),
            ) from None
        entries.update(parse_config(source, str(path)))

    for override in overrides:
        entries.update(parse_override(override))

    for key, value in flags.items():
        if value is not None:
            entries[key] = ConfigEntry(str(value), filename=f"--{key}")

    return resolve_entries(model, entries)


def config_hash(config: BaseModel) -> str:
    """Return the sha256 digest of the canonical json of the resolved config."""
    data = json.loads(config.json())
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
