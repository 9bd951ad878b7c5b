__all__ = [
    "nowcaster",
    "main",
]


import logging
from datetime import date
from functools import wraps
from typing import Any, Callable, Optional, Tuple, TypeVar

import click
from beet.core.utils import dump_json
from beet.toolchain.cli import LogHandler, message_fence

from nowcaster import __version__

from .config import RunConfig, load_config
from .error import NowcasterError
from .period import Quarter
from .report import BacktestSummary
from .synthetic import DgpConfig
from .workflow import cmd_backtest, cmd_ingest, cmd_news, cmd_simulate, cmd_train

CommandType = TypeVar("CommandType", bound=Callable[..., Any])


def report_errors(command: CommandType) -> CommandType:
    """Print nowcaster errors as json on stderr and exit with status 1."""

    @wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return command(*args, **kwargs)
        except NowcasterError as exc:
            click.echo(dump_json(exc.to_json()), err=True)
            click.get_current_context().exit(1)

    return wrapper  # type: ignore


def config_options(command: CommandType) -> CommandType:
    """Options shared by every command that resolves a run configuration."""
    options = [
        click.option(
            "-c",
            "--config",
            metavar="FILENAME",
            type=click.Path(exists=True, dir_okay=False),
            help="Configuration file.",
        ),
        click.option(
            "-s",
            "--set",
            "overrides",
            metavar="KEY=VALUE",
            multiple=True,
            help="Override a configuration entry.",
        ),
        click.option("--seed", type=int, help="Random seed."),
        click.option(
            "-o",
            "--output",
            metavar="DIRECTORY",
            help="Output directory.",
        ),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def resolve(
    config: Optional[str],
    overrides: Tuple[str, ...],
    seed: Optional[int],
    output: Optional[str],
    **flags: Any,
) -> RunConfig:
    return load_config(config, overrides, seed=seed, output=output, **flags)


@click.group(context_settings={"help_option_names": ("-h", "--help")})
@click.option(
    "-l",
    "--log",
    metavar="LEVEL",
    type=click.Choice(
        ["CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG"],
        case_sensitive=False,
    ),
    default="WARNING",
    help="Configure output verbosity.",
)
@click.version_option(
    __version__,
    "-v",
    "--version",
    message=click.style("%(prog)s", fg="red")
    + click.style(" v%(version)s", fg="green"),
)
def nowcaster(log: str):
    """Nowcast quarterly targets with an LSTM ensemble and a dynamic factor model."""
    logger = logging.getLogger()
    logger.setLevel(log.upper())
    if not any(isinstance(handler, LogHandler) for handler in logger.handlers):
        logger.addHandler(LogHandler())


@nowcaster.command()
@click.argument("directory", required=False, type=click.Path(file_okay=False))
@config_options
@report_errors
def ingest(
    directory: Optional[str],
    config: Optional[str],
    overrides: Tuple[str, ...],
    seed: Optional[int],
    output: Optional[str],
):
    """Validate a directory of vintage snapshots."""
    run_config = resolve(config, overrides, seed, None, vintages=directory)

    with message_fence(f"Ingesting with nowcaster v{__version__}"):
        report = cmd_ingest(run_config, output)

    click.echo(dump_json(report))


@nowcaster.command()
@config_options
@report_errors
def simulate(
    config: Optional[str],
    overrides: Tuple[str, ...],
    seed: Optional[int],
    output: Optional[str],
):
    """Generate a synthetic vintage directory."""
    dgp = load_config(config, overrides, model=DgpConfig, seed=seed)

    with message_fence(f"Simulating with nowcaster v{__version__}"):
        paths = cmd_simulate(dgp, output or "simulation")

    click.echo(f"Wrote {len(paths)} snapshots.")


@nowcaster.command()
@config_options
@report_errors
def train(
    config: Optional[str],
    overrides: Tuple[str, ...],
    seed: Optional[int],
    output: Optional[str],
):
    """Train the LSTM ensemble and the factor model."""
    run_config = resolve(config, overrides, seed, output)

    with message_fence(f"Training with nowcaster v{__version__}"):
        trained = cmd_train(run_config)

    for path in trained.paths:
        click.echo(str(path))


@nowcaster.command()
@click.argument("targets", nargs=-1, required=True)
@config_options
@click.option(
    "-m",
    "--model",
    "models",
    type=click.Choice(["lstm", "dfm"]),
    multiple=True,
    help="Restrict the comparison to the given models.",
)
@click.option(
    "--models-dir",
    metavar="DIRECTORY",
    type=click.Path(exists=True, file_okay=False),
    help="Directory holding the trained models.",
)
@click.option(
    "--compare-fill",
    is_flag=True,
    help="Also score the LSTM under the other fill method.",
)
@report_errors
def backtest(
    targets: Tuple[str, ...],
    config: Optional[str],
    overrides: Tuple[str, ...],
    seed: Optional[int],
    output: Optional[str],
    models: Tuple[str, ...],
    models_dir: Optional[str],
    compare_fill: bool,
):
    """Replay the vintages around every target quarter."""
    run_config = resolve(config, overrides, seed, output)
    target_periods = [parse_quarter(target) for target in targets]

    with message_fence(f"Backtesting with nowcaster v{__version__}"):
        results = cmd_backtest(
            run_config,
            target_periods,
            models or ("lstm", "dfm"),
            models_dir,
            compare_fill,
        )

    click.echo(str(BacktestSummary(results)))


@nowcaster.command()
@click.argument("date_old", type=click.DateTime(formats=["%Y-%m-%d"]))
@click.argument("date_new", type=click.DateTime(formats=["%Y-%m-%d"]))
@click.argument("target")
@config_options
@click.option(
    "--models-dir",
    metavar="DIRECTORY",
    type=click.Path(exists=True, file_okay=False),
    help="Directory holding the trained models.",
)
@report_errors
def news(
    date_old: Any,
    date_new: Any,
    target: str,
    config: Optional[str],
    overrides: Tuple[str, ...],
    seed: Optional[int],
    output: Optional[str],
    models_dir: Optional[str],
):
    """Decompose the nowcast change between two vintages."""
    run_config = resolve(config, overrides, seed, output)

    with message_fence(f"Decomposing with nowcaster v{__version__}"):
        decomposition = cmd_news(
            run_config,
            as_date(date_old),
            as_date(date_new),
            parse_quarter(target),
            models_dir,
        )

    click.echo(dump_json(decomposition.to_json()))


def parse_quarter(value: str) -> Quarter:
    try:
        return Quarter.parse(value)
    except ValueError as exc:
        raise click.BadParameter(str(exc)) from None


def as_date(value: Any) -> date:
    return value.date() if hasattr(value, "date") else value


def main():
    """Invoke the command-line entrypoint."""
    nowcaster(prog_name="nowcaster")
