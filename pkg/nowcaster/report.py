"""Machine-readable reports and the human-readable backtest table."""

__all__ = [
    "BacktestSummary",
    "output_meta",
    "ingest_report",
    "format_percent",
    "render_table",
]


import re
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from beet.core.utils import JsonDict

from . import __version__
from .dataset import ragged_edge_profile
from .diagnostic import DiagnosticCollection
from .evaluation import BacktestResult, significance_stars
from .vintage import VintageStore

NUMBER_REGEX = re.compile(r"^-?\d+(\.\d+)?\**$")

MAX_COLUMN_WIDTH = 70

Sections = Dict[Tuple[str, ...], List[Tuple[str, ...]]]


def format_percent(value: Optional[float]) -> str:
    return "-" if value is None else f"{100 * value:.2f}"


def output_meta(command: str, config_hash: str, seed: int) -> JsonDict:
    """Return the metadata embedded in every output file."""
    return {
        "command": command,
        "nowcaster": __version__,
        "config_hash": config_hash,
        "seed": seed,
    }


def ingest_report(store: VintageStore, diagnostics: DiagnosticCollection) -> JsonDict:
    """Summarize a vintage store and the findings of its validation."""
    latest = store.latest
    profile = ragged_edge_profile(latest)
    counts = latest.mask.sum(axis=0)

    return {
        "snapshots": len(store),
        "first_asof": store.dates[0].isoformat(),
        "last_asof": store.dates[-1].isoformat(),
        "target": store.target,
        "columns": [
            {
                "id": column,
                "frequency": frequency,
                "observations": int(count),
            }
            for column, frequency, count in zip(
                latest.columns, latest.frequencies, counts
            )
        ],
        "ragged_edge": profile.to_json(),
        "errors": len(list(diagnostics.get_all_errors())),
        "warnings": len(list(diagnostics.get_all_warnings())),
        **diagnostics.to_json(),
    }


@dataclass
class BacktestSummary:
    """Aligned table with the metrics of every target period, in percent."""

    results: Sequence[BacktestResult]

    indent: str = " " * 7

    def __str__(self) -> str:
        return "\n".join(self.format())

    @property
    def models(self) -> List[str]:
        models: List[str] = []
        for result in self.results:
            for model in result.curves or result.mae:
                if model not in models:
                    models.append(model)
        return models

    def format(self) -> Iterator[str]:
        plural = "s" * (len(self.results) != 1)
        yield f"Backtested {len(self.results)} target period{plural}"
        sections = {**self.format_metrics(), **self.format_revisions()}
        yield from render_table(sections, self.indent)

    def format_metrics(self) -> Sections:
        models = self.models
        header = ("Average performance",) + tuple(
            f"{model} {metric}" for model in models for metric in ["MAE", "RMSE"]
        )

        rows: List[Tuple[str, ...]] = []
        for result in self.results:
            stars = significance_stars(result.t_test.pvalue) if result.t_test else ""
            cells: List[str] = [str(result.target_period)]
            for model in models:
                mae = format_percent(result.mae.get(model))
                if model == result.challenger and mae != "-":
                    mae += stars
                cells += [mae, format_percent(result.rmse.get(model))]
            rows.append(tuple(cells))

        return {header: rows}

    def format_revisions(self) -> Sections:
        compared = [result for result in self.results if result.revisions]
        if not compared:
            return {}

        a, b = compared[0].baseline, compared[0].challenger
        header = (
            "Revisions",
            f"{a} bigger",
            f"{b} bigger",
            f"{a} avg",
            f"{b} avg",
        )

        return {
            header: [
                (
                    str(result.target_period),
                    format_percent(result.revisions.share_a_bigger),
                    format_percent(result.revisions.share_b_bigger),
                    format_percent(result.revisions.avg_abs_rev_a),
                    format_percent(result.revisions.avg_abs_rev_b),
                )
                for result in compared
                if result.revisions
            ]
        }


def render_table(sections: Sections, indent: str = "") -> Iterator[str]:
    """Lay out titled groups of rows in columns of shared width.

    Row labels are indented under their title. Numeric cells are right-aligned.
    """
    groups = [
        [header, *[(indent + row[0], *row[1:]) for row in rows]]
        for header, rows in sections.items()
    ]
    cells = [row for group in groups for row in group]
    widths = [
        min(max(len(row[i]) for row in cells if len(row) > i) + 5, MAX_COLUMN_WIDTH)
        for i in range(max(map(len, cells)))
    ]
    rule = "-" * (sum(widths) + 3 * (len(widths) - 1))

    def line(row: Tuple[str, ...]) -> str:
        return " | ".join(
            text[: width - 3] + "..."
            if len(text) >= width
            else text.rjust(width) if NUMBER_REGEX.match(text) else text.ljust(width)
            for text, width in zip(row, widths)
        )

    for header, *rows in groups:
        yield from [rule, line(header), rule]
        yield from map(line, rows)
