__all__ = [
    "TrainedModels",
    "open_store",
    "training_slice",
    "training_asof",
    "cmd_ingest",
    "cmd_simulate",
    "cmd_train",
    "cmd_backtest",
    "cmd_news",
]


import json
import logging
from dataclasses import replace
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

from beet.core.utils import FileSystemPath, JsonDict, dump_json

from .config import RunConfig, config_hash
from .dataset import MixedFrequencyDataset
from .dfm import StateSpaceModel, em_fit
from .diagnostic import DiagnosticCollection
from .error import EvaluationError, VintageError
from .evaluation import (
    BacktestResult,
    ConstantNowcaster,
    evaluate,
    replay,
    write_curves,
)
from .imputation import FillMethod
from .lstm import LstmEnsemble, train
from .news import NewsDecomposition, Nowcaster, decompose
from .period import Quarter
from .report import BacktestSummary, ingest_report, output_meta
from .synthetic import DgpConfig, simulate
from .vintage import (
    VintageStore,
    check_monotone,
    read_vintage_store,
    vintage_at,
    write_snapshot,
    write_vintage_store,
)

logger = logging.getLogger("nowcaster")


LSTM_FILENAME = "lstm.json"
DFM_FILENAME = "dfm.json"
NAIVE_MODEL = "naive"


class TrainedModels(NamedTuple):
    ensemble: LstmEnsemble
    ssm: StateSpaceModel
    paths: Tuple[Path, Path]


def write_json(path: Path, data: JsonDict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_json(data))
    logger.info("Wrote %s.", path)
    return path


def open_store(
    config: RunConfig,
    diagnostics: Optional[DiagnosticCollection] = None,
) -> VintageStore:
    if config.vintages is None:
        raise VintageError("No vintage directory configured.")
    return read_vintage_store(
        config.vintages, config.target, config.quarterly, diagnostics
    )


def training_slice(
    ds: MixedFrequencyDataset,
    config: RunConfig,
) -> MixedFrequencyDataset:
    """Return the rows feeding the training quarters, window history included."""
    first = config.training.start.end.shift(1 - config.lstm.n_timesteps)
    return ds.slice(first, config.training.end.end)


def training_asof(store: VintageStore, config: RunConfig) -> date:
    """Return the as-of date of the latest vintage before the training window ends.

    An explicit `train_asof` takes precedence. Later vintages carry releases
    and revisions of the evaluation quarters and are never used for training.
    """
    if config.train_asof is not None:
        return store.resolve(config.train_asof)
    last_day = config.training.end.shift(1).start.first_day() - timedelta(days=1)
    return store.resolve(last_day)


def cmd_ingest(config: RunConfig, output: Optional[FileSystemPath] = None) -> JsonDict:
    """Validate every snapshot of the vintage directory and describe the store."""
    diagnostics = DiagnosticCollection()
    store = open_store(config, diagnostics)
    check_monotone(store, diagnostics)

    for warning in diagnostics.get_all_warnings():
        logger.warning("%s", warning.message)

    report = {"meta": output_meta("ingest", config_hash(config), config.seed)}
    report.update(ingest_report(store, diagnostics))

    if output is not None:
        write_json(Path(output) / "ingest.json", report)

    return report


def cmd_simulate(dgp: DgpConfig, output: FileSystemPath) -> List[Path]:
    """Write the vintage directory, the truth grid and the run metadata."""
    output = Path(output)
    truth, store = simulate(dgp)

    paths = write_vintage_store(store, output / "vintages")
    write_snapshot(truth, output / "truth.csv")
    write_json(
        output / "simulate.json",
        {
            "meta": output_meta("simulate", config_hash(dgp), dgp.seed),
            "config": json.loads(dgp.json()),
            "snapshots": [day.isoformat() for day in store.dates],
        },
    )

    logger.info("Wrote %d snapshots to %s.", len(paths), output / "vintages")
    return paths


def cmd_train(config: RunConfig) -> TrainedModels:
    """Train both models on the training window of the chosen vintage."""
    store = open_store(config)
    as_of = training_asof(store, config)
    ds = training_slice(vintage_at(store, as_of), config)

    logger.info(
        "Training on %s to %s from the vintage of %s.",
        config.training.start,
        config.training.end,
        as_of,
    )

    ensemble = train(config.lstm, ds)
    ssm = em_fit(ds, "default", config.dfm.max_iter, config.dfm.tol)

    meta = output_meta("train", config_hash(config), config.seed)
    meta["train_asof"] = as_of.isoformat()
    config.output.mkdir(parents=True, exist_ok=True)

    lstm_path = config.output / LSTM_FILENAME
    ensemble.save(lstm_path, meta)
    logger.info("Wrote %s.", lstm_path)

    dfm_path = config.output / DFM_FILENAME
    ssm.save(dfm_path, meta)
    logger.info("Wrote %s.", dfm_path)

    return TrainedModels(ensemble, ssm, (lstm_path, dfm_path))


def load_models(
    directory: Path,
    names: Sequence[str],
    compare_fill: bool = False,
) -> Dict[str, Nowcaster]:
    """Load the persisted models along with the naive training-mean benchmark."""
    models: Dict[str, Nowcaster] = {}
    benchmark: Optional[float] = None

    if "lstm" in names:
        ensemble = LstmEnsemble.load(directory / LSTM_FILENAME)
        models["lstm"] = ensemble
        benchmark = ensemble.target_mean

        if compare_fill:
            kind = "mean" if ensemble.config.fill_method.kind == "arma" else "arma"
            other = FillMethod(kind=kind)
            models[f"lstm_{kind}"] = replace(
                ensemble,
                config=ensemble.config.copy(update={"fill_method": other}),
            )

    if "dfm" in names:
        ssm = StateSpaceModel.load(directory / DFM_FILENAME)
        models["dfm"] = ssm
        if benchmark is None and ssm.target is not None:
            assert ssm.means is not None
            benchmark = float(ssm.means[ssm.index_of(ssm.target)])

    if benchmark is not None:
        models[NAIVE_MODEL] = ConstantNowcaster(benchmark)

    return models


def cmd_backtest(
    config: RunConfig,
    target_periods: Sequence[Quarter],
    models: Sequence[str] = ("lstm", "dfm"),
    model_dir: Optional[FileSystemPath] = None,
    compare_fill: bool = False,
) -> List[BacktestResult]:
    """Replay the vintages around every target quarter and score the models."""
    if not target_periods:
        raise EvaluationError("No target period to backtest.")

    store = open_store(config)
    predictors = load_models(Path(model_dir or config.output), models, compare_fill)
    meta = output_meta("backtest", config_hash(config), config.seed)

    results: List[BacktestResult] = []

    for target_period in map(Quarter.parse, target_periods):
        curves = replay(store, predictors, target_period, config.window_days)
        result = evaluate(curves, benchmark=NAIVE_MODEL)
        results.append(result)

        write_json(
            config.output / f"backtest-{target_period}.json",
            {"meta": meta, **result.to_json()},
        )
        path = config.output / f"curves-{target_period}.csv"
        write_curves(curves, path, meta)
        logger.info("Wrote %s.", path)

    summary = config.output / "summary.txt"
    summary.write_text(str(BacktestSummary(results)) + "\n")
    logger.info("Wrote %s.", summary)

    return results


def cmd_news(
    config: RunConfig,
    date_old: date,
    date_new: date,
    target_period: Quarter,
    model_dir: Optional[FileSystemPath] = None,
) -> NewsDecomposition:
    """Decompose the change of the LSTM nowcast between two vintages."""
    store = open_store(config)
    ensemble = LstmEnsemble.load(Path(model_dir or config.output) / LSTM_FILENAME)
    target_period = Quarter.parse(target_period)

    old_date, new_date = store.resolve(date_old), store.resolve(date_new)
    decomposition = decompose(
        ensemble,
        vintage_at(store, old_date),
        vintage_at(store, new_date),
        target_period,
        old_date,
        new_date,
    )

    write_json(
        config.output / f"news-{target_period}-{old_date}-{new_date}.json",
        {
            "meta": output_meta("news", config_hash(config), config.seed),
            **decomposition.to_json(),
        },
    )

    return decomposition
