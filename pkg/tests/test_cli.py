import json
from pathlib import Path
from typing import List

import pytest
from click.testing import CliRunner, Result

from nowcaster import LstmEnsemble, StateSpaceModel, __version__, read_curves
from nowcaster.cli import nowcaster

SIMULATION = [
    "-s",
    "n_monthly_series=3",
    "-s",
    "n_quarterly_series=0",
    "-s",
    "start=2010-01",
    "-s",
    "n_months=48",
    "-s",
    "vintages_from=2012-01-01",
    "-s",
    "weekly_from=2013-07-01",
    "--seed",
    "7",
]


def invoke(*args: str) -> Result:
    return CliRunner().invoke(nowcaster, list(args), catch_exceptions=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory: pytest.TempPathFactory) -> Path:
    directory = tmp_path_factory.mktemp("workspace")
    result = invoke("simulate", *SIMULATION, "-o", str(directory / "simulation"))
    assert result.exit_code == 0, result.output
    return directory


@pytest.fixture(scope="module")
def run_options(workspace: Path) -> List[str]:
    config = workspace / "nowcaster.cfg"
    config.write_text(
        "\n".join(
            [
                f"vintages = {workspace / 'simulation' / 'vintages'}",
                "training.start = 2010Q2",
                "training.end = 2012Q4",
                "lstm.n_timesteps = 3",
                "lstm.hidden_size = 3",
                "lstm.n_networks = 2",
                "lstm.n_epochs = 3",
                "dfm.max_iter = 20",
                "",
            ]
        )
    )
    return ["-c", str(config), "-o", str(workspace / "models")]


@pytest.fixture(scope="module")
def trained(workspace: Path, run_options: List[str]) -> Path:
    result = invoke("train", *run_options)
    assert result.exit_code == 0, result.output
    return workspace / "models"


def test_version():
    result = invoke("--version")
    assert __version__ in result.output


def test_simulate(workspace: Path):
    simulation = workspace / "simulation"
    assert (simulation / "truth.csv").is_file()
    assert (simulation / "vintages" / "2012-01-01.csv").is_file()
    assert (simulation / "vintages" / "2014-02-01.csv").is_file()

    data = json.loads((simulation / "simulate.json").read_text())
    assert data["meta"]["command"] == "simulate"
    assert data["meta"]["seed"] == 7
    assert data["config"]["n_months"] == 48
    assert data["snapshots"][0] == "2012-01-01"


def test_simulate_deterministic(workspace: Path, tmp_path: Path):
    result = invoke("simulate", *SIMULATION, "-o", str(tmp_path))
    assert result.exit_code == 0
    for path in (workspace / "simulation" / "vintages").iterdir():
        assert (tmp_path / "vintages" / path.name).read_text() == path.read_text()


def test_ingest(workspace: Path, tmp_path: Path):
    vintages = workspace / "simulation" / "vintages"
    result = invoke("ingest", str(vintages), "-o", str(tmp_path))
    assert result.exit_code == 0, result.output

    report = json.loads((tmp_path / "ingest.json").read_text())
    assert report["meta"]["command"] == "ingest"
    assert report["target"] == "target"
    assert report["first_asof"] == "2012-01-01"
    assert report["errors"] == 0
    columns = [column["id"] for column in report["columns"]]
    assert columns == ["m1", "m2", "m3", "target"]


def test_ingest_missing_directory(tmp_path: Path):
    result = invoke("ingest", str(tmp_path / "missing"))
    assert result.exit_code == 1
    assert '"error": "VintageError"' in result.output


def test_ingest_malformed(tmp_path: Path):
    source = "date,series_id,value\n2020-01,target,abc\n"
    (tmp_path / "2020-02-01.csv").write_text(source)
    result = invoke("ingest", str(tmp_path))
    assert result.exit_code == 1
    assert '"error": "IngestError"' in result.output
    assert '"line": 2' in result.output


def test_invalid_override(workspace: Path):
    result = invoke("train", "-s", "lstm.n_networks=0")
    assert result.exit_code == 1
    assert '"error": "ConfigError"' in result.output


def test_train(trained: Path):
    ensemble = LstmEnsemble.load(trained / "lstm.json")
    ssm = StateSpaceModel.load(trained / "dfm.json")

    assert len(ensemble.members) == 2
    assert ensemble.feature_columns == ("m1", "m2", "m3")
    assert ssm.columns == ("m1", "m2", "m3", "target")

    meta = json.loads((trained / "lstm.json").read_text())["meta"]
    dfm_meta = json.loads((trained / "dfm.json").read_text())["meta"]
    assert meta["command"] == "train"
    assert meta["config_hash"] == dfm_meta["config_hash"]
    assert meta["train_asof"] == dfm_meta["train_asof"] == "2012-12-01"


def test_backtest(trained: Path, run_options: List[str]):
    result = invoke("backtest", "2013Q2", "2013q3", *run_options)
    assert result.exit_code == 0, result.output
    assert "Backtested 2 target periods" in result.output

    data = json.loads((trained / "backtest-2013Q2.json").read_text())
    assert data["models"] == ["lstm", "dfm"]
    assert set(data["mae"]) == {"lstm", "dfm"}
    assert data["benchmark"]["model"] == "naive"
    assert {curve["model"] for curve in data["curves"]} == {"lstm", "dfm", "naive"}
    assert data["meta"]["command"] == "backtest"

    curves = read_curves(trained / "curves-2013Q3.csv")
    assert set(curves["model"]) == {"lstm", "dfm", "naive"}
    assert (curves["day_difference"].abs() <= 100).all()
    summary = (trained / "summary.txt").read_text()
    assert summary.startswith("Backtested 2 target periods")


def test_backtest_single_model(trained: Path, run_options: List[str]):
    result = invoke("backtest", "2013Q2", "-m", "dfm", *run_options)
    assert result.exit_code == 0, result.output
    data = json.loads((trained / "backtest-2013Q2.json").read_text())
    assert data["models"] == ["dfm"]
    assert data["benchmark"]["model"] == "naive"
    assert data["t_test"] is None


def test_backtest_compare_fill(trained: Path, run_options: List[str]):
    result = invoke("backtest", "2013Q2", "-m", "lstm", "--compare-fill", *run_options)
    assert result.exit_code == 0, result.output
    data = json.loads((trained / "backtest-2013Q2.json").read_text())
    assert data["models"] == ["lstm", "lstm_arma"]


def test_backtest_invalid_target(run_options: List[str]):
    result = invoke("backtest", "2013Q5", *run_options)
    assert result.exit_code == 2


def test_news(trained: Path, run_options: List[str]):
    result = invoke("news", "2013-07-01", "2013-08-05", "2013Q3", *run_options)
    assert result.exit_code == 0, result.output

    data = json.loads((trained / "news-2013Q3-2013-07-01-2013-08-05.json").read_text())
    assert data["target_period"] == "2013Q3"
    assert data["meta"]["command"] == "news"
    total = sum(data["rescaled_contributions"].values()) + data["rescaled_revision"]
    assert total == pytest.approx(data["delta"], abs=1e-10)


def test_news_missing_models(tmp_path: Path, run_options: List[str]):
    result = invoke(
        "news",
        "2013-07-01",
        "2013-08-05",
        "2013Q3",
        *run_options,
        "--models-dir",
        str(tmp_path),
    )
    assert result.exit_code == 1
    assert '"error": "ModelFileError"' in result.output


def test_train_default_simulation(tmp_path: Path):
    result = invoke("simulate", "-o", str(tmp_path / "simulation"))
    assert result.exit_code == 0, result.output

    config = tmp_path / "nowcaster.cfg"
    config.write_text(
        "\n".join(
            [
                f"vintages = {tmp_path / 'simulation' / 'vintages'}",
                "training.start = 2005Q2",
                "training.end = 2010Q4",
                "lstm.n_timesteps = 3",
                "lstm.hidden_size = 3",
                "lstm.n_networks = 1",
                "lstm.n_epochs = 3",
                "dfm.max_iter = 10",
                "",
            ]
        )
    )
    result = invoke("train", "-c", str(config), "-o", str(tmp_path / "models"))
    assert result.exit_code == 0, result.output

    ensemble = LstmEnsemble.load(tmp_path / "models" / "lstm.json")
    ssm = StateSpaceModel.load(tmp_path / "models" / "dfm.json")
    assert ensemble.feature_columns == ("m1", "m2", "m3", "m4", "q1")
    assert ssm.columns == ("m1", "m2", "m3", "m4", "q1", "target")
