from datetime import date

import numpy as np
import pytest

from nowcaster import (
    DgpConfig,
    LstmConfig,
    LstmEnsemble,
    MixedFrequencyDataset,
    Period,
    Simulation,
    StateSpaceModel,
    em_fit,
    simulate,
    train,
)

nan = np.nan


def make_dataset(start: str, rows: list[list[float]]) -> MixedFrequencyDataset:
    """Monthly columns `a` and `b` followed by the quarterly `target`."""
    return MixedFrequencyDataset(
        start=Period.parse(start),
        columns=("a", "b", "target"),
        frequencies=("monthly", "monthly", "quarterly"),
        values=np.array(rows, dtype=float),
        target="target",
    )


@pytest.fixture
def make_ds():
    return make_dataset


@pytest.fixture
def year_ds():
    return make_dataset(
        "2019-01",
        [
            [0.1, 1.0, nan],
            [0.2, 2.0, nan],
            [0.3, 3.0, 0.5],
            [0.4, 4.0, nan],
            [0.5, 5.0, nan],
            [0.6, 6.0, 1.1],
            [0.7, 7.0, nan],
            [0.8, 8.0, nan],
            [0.9, 9.0, 1.7],
            [1.0, 10.0, nan],
            [1.1, 11.0, nan],
            [1.2, 12.0, 2.3],
        ],
    )


@pytest.fixture(scope="session")
def dgp_config():
    return DgpConfig(
        n_monthly_series=3,
        n_quarterly_series=0,
        start=Period(2010, 1),
        n_months=48,
        loadings=[1.0, 0.8, 0.6, 0.9],
        noise_variance=0.1,
        monthly_lag=1,
        quarterly_lag=2,
        vintages_from=date(2012, 1, 1),
        weekly_from=date(2013, 7, 1),
        seed=7,
    )


@pytest.fixture(scope="session")
def simulation(dgp_config: DgpConfig) -> Simulation:
    return simulate(dgp_config)


@pytest.fixture(scope="session")
def lstm_config():
    return LstmConfig(
        n_timesteps=3,
        hidden_size=3,
        n_networks=2,
        n_epochs=5,
        seed=1,
    )


@pytest.fixture(scope="session")
def tiny_ensemble(simulation: Simulation, lstm_config: LstmConfig) -> LstmEnsemble:
    return train(lstm_config, simulation.truth)


@pytest.fixture(scope="session")
def fitted_dfm(simulation: Simulation) -> StateSpaceModel:
    return em_fit(simulation.truth, max_iter=50)


@pytest.fixture(scope="session")
def quarterly_simulation(dgp_config: DgpConfig) -> Simulation:
    """Same economy with a quarterly feature `q1` ahead of the target."""
    return simulate(
        dgp_config.copy(
            update={"n_quarterly_series": 1, "loadings": [1.0, 0.8, 0.6, 0.7, 0.9]}
        )
    )
