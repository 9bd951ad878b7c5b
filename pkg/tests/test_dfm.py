from dataclasses import replace
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
import pytest

from nowcaster import (
    DataError,
    FilterError,
    MixedFrequencyDataset,
    Period,
    Quarter,
    ShapeError,
    StateSpaceModel,
    dfm_nowcast,
    em_fit,
    kalman_filter,
    kalman_smoother,
)
from nowcaster.dfm import filter_values, smooth_values

nan = np.nan


def model(
    loadings: Sequence[float],
    variances: Sequence[float],
    phi: float = 0.6,
    columns: Sequence[str] = (),
) -> StateSpaceModel:
    columns = tuple(columns) or tuple(f"c{j}" for j in range(len(loadings)))
    return StateSpaceModel(
        columns=columns,
        loadings=np.array(loadings, dtype=float),
        phi=phi,
        factor_variance=1.0,
        idiosyncratic_variances=np.array(variances, dtype=float),
    )


def joint_oracle(
    ssm: StateSpaceModel,
    y: np.ndarray,
) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Condition the joint Gaussian distribution of factor and observations directly."""
    n_rows = y.shape[0]
    lags = np.abs(np.subtract.outer(np.arange(n_rows), np.arange(n_rows)))
    factor_cov = ssm.initial_variance * ssm.phi**lags

    cells = list(zip(*np.nonzero(~np.isnan(y))))
    values = np.array([y[t, j] for t, j in cells])
    loadings = ssm.loadings
    variances = ssm.idiosyncratic_variances

    cov = np.array(
        [
            [
                loadings[j] * loadings[k] * factor_cov[t, s]
                + (variances[j] if (t, j) == (s, k) else 0.0)
                for s, k in cells
            ]
            for t, j in cells
        ]
    )
    cross = np.array(
        [[loadings[j] * factor_cov[t, s] for s, j in cells] for t in range(n_rows)]
    )

    _, logdet = np.linalg.slogdet(cov)
    loglikelihood = -0.5 * (
        len(values) * np.log(2 * np.pi) + logdet + values @ np.linalg.solve(cov, values)
    )
    mean = cross @ np.linalg.solve(cov, values)
    posterior = factor_cov - cross @ np.linalg.solve(cov, cross.T)

    return (
        float(loglikelihood),
        mean,
        np.diag(posterior),
        np.array([posterior[t + 1, t] for t in range(n_rows - 1)]),
    )


def simulate_factor(
    n_rows: int,
    loadings: Sequence[float],
    variances: Sequence[float],
    phi: float,
    seed: int,
) -> Tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    factor = np.empty(n_rows)
    factor[0] = rng.normal(0, np.sqrt(1 / (1 - phi**2)))
    for t in range(1, n_rows):
        factor[t] = phi * factor[t - 1] + rng.normal()
    noise = rng.normal(size=(n_rows, len(loadings))) * np.sqrt(variances)
    return factor, factor[:, np.newaxis] * np.array(loadings) + noise


def factor_dataset(
    values: np.ndarray,
    start: Period = Period(2000, 1),
) -> MixedFrequencyDataset:
    """Monthly columns followed by a target kept at quarter-end months only."""
    values = values.copy()
    n_monthly = values.shape[1] - 1
    quarter_end = np.array([start.shift(i).is_quarter_end for i in range(len(values))])
    values[~quarter_end, -1] = nan
    return MixedFrequencyDataset(
        start=start,
        columns=tuple(f"m{j + 1}" for j in range(n_monthly)) + ("target",),
        frequencies=("monthly",) * n_monthly + ("quarterly",),
        values=values,
        target="target",
    )


def test_model_invariants():
    with pytest.raises(DataError):
        model([1.0], [1.0], phi=1.0)
    with pytest.raises(DataError):
        model([1.0, 0.5], [1.0, 0.0])
    with pytest.raises(DataError):
        model([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ShapeError):
        model([1.0, 0.5], [1.0])


def test_filter_noiseless():
    ssm = model([1.0], [1e-14], phi=0.0)
    y = np.array([[0.3], [nan], [-1.2], [2.0]])
    output = filter_values(ssm, y)
    for t in [0, 2, 3]:
        assert output.filtered_mean[t] == pytest.approx(y[t, 0], abs=1e-10)


def test_filter_univariate_joint_density():
    ssm = model([0.8], [0.5], phi=0.7)
    y = np.array([[0.4], [-0.3], [1.1]])
    expected, _, _, _ = joint_oracle(ssm, y)
    assert abs(filter_values(ssm, y).loglikelihood - expected) < 1e-8


def test_filter_prediction_inflates_variance():
    ssm = model([1.0, 0.5], [0.2, 0.4], phi=0.8)
    y = np.array([[0.5, 0.1], [nan, nan], [0.2, nan]])
    output = filter_values(ssm, y)
    assert output.filtered_variance[1] > output.filtered_variance[0]
    assert output.filtered_mean[1] == pytest.approx(0.8 * output.filtered_mean[0])


@pytest.mark.parametrize("seed", range(8))
def test_exact_joint_gaussian(seed: int):
    rng = np.random.default_rng(seed)
    n_rows = int(rng.integers(2, 5))
    n_columns = int(rng.integers(1, 4))
    ssm = model(
        rng.uniform(0.3, 1.5, n_columns) * rng.choice([-1, 1], n_columns),
        rng.uniform(0.1, 1.0, n_columns),
        phi=float(rng.uniform(-0.9, 0.9)),
    )
    y = rng.normal(size=(n_rows, n_columns))
    y[rng.random(size=y.shape) < 0.3] = nan
    y[0, 0] = 0.7

    loglikelihood, mean, variance, lag_one = joint_oracle(ssm, y)
    smoothed = smooth_values(ssm, y)

    assert abs(smoothed.loglikelihood - loglikelihood) < 1e-8
    assert np.allclose(smoothed.smoothed_mean, mean, rtol=0, atol=1e-8)
    assert np.allclose(smoothed.smoothed_variance, variance, rtol=0, atol=1e-8)
    assert np.allclose(smoothed.lag_one_covariance, lag_one, rtol=0, atol=1e-8)


def test_missing_cell_conditioning():
    ssm = model([1.0, 0.6, 0.9], [0.3, 0.5, 0.2], phi=0.5)
    dense = np.array([[0.2, 0.4, -0.1], [0.9, 0.3, 0.5], [-0.4, 0.1, 0.0]])
    reduced = dense.copy()
    reduced[1, 2] = nan

    full = smooth_values(ssm, dense)
    partial = smooth_values(ssm, reduced)
    loglikelihood, mean, _, _ = joint_oracle(ssm, reduced)

    assert not np.allclose(full.smoothed_mean, partial.smoothed_mean)
    assert abs(partial.loglikelihood - loglikelihood) < 1e-8
    assert np.allclose(partial.smoothed_mean, mean, rtol=0, atol=1e-8)


def test_smoother_boundary():
    ssm = model([1.0, 0.5], [0.2, 0.4], phi=0.8)
    y = np.random.default_rng(3).normal(size=(6, 2))
    y[2] = nan
    smoothed = smooth_values(ssm, y)
    filtered = smoothed.filtered

    assert smoothed.smoothed_mean[-1] == filtered.filtered_mean[-1]
    assert smoothed.smoothed_variance[-1] == filtered.filtered_variance[-1]
    assert (smoothed.smoothed_variance <= filtered.filtered_variance + 1e-15).all()


def test_smoother_noiseless():
    ssm = model([1.0], [1e-14], phi=0.5)
    y = np.array([[0.3], [-0.2], [1.0]])
    assert np.allclose(smooth_values(ssm, y).smoothed_mean, y[:, 0], atol=1e-10)


def test_filter_error_names_period():
    ssm = model([1.0], [0.5])
    with pytest.raises(FilterError) as exc_info:
        filter_values(ssm, np.array([[0.1], [np.inf]]), Period(2020, 1))
    assert exc_info.value.period == "2020-02"


def test_dataset_columns_must_match(year_ds: MixedFrequencyDataset):
    ssm = model([1.0, 0.5, 0.2], [1.0, 1.0, 1.0], columns=["b", "a", "target"])
    with pytest.raises(ShapeError):
        kalman_filter(ssm, year_ds)
    ssm = replace(ssm, columns=("a", "b", "target"))
    assert kalman_smoother(ssm, year_ds).smoothed_mean.shape == (12,)


def test_em_recovery():
    loadings = [1.0, 0.8, 0.6, 0.9, 0.7]
    variances = [0.5] * 5
    _, values = simulate_factor(300, loadings, variances, 0.7, seed=12)
    ds = factor_dataset(values)

    fit = em_fit(ds)
    scales = np.array([np.nanstd(ds.values[:, j]) for j in range(5)])
    truth = np.array(loadings) / scales

    assert fit.loadings[0] > 0
    assert np.abs(fit.loadings - truth).max() < 0.15
    assert abs(fit.phi - 0.7) < 0.1
    assert fit.iterations == len(fit.loglikelihoods)
    assert np.all(np.diff(fit.loglikelihoods) >= -1e-8)


def test_em_monotone_with_missing_cells():
    _, values = simulate_factor(90, [1.0, -0.5, 0.8], [0.4, 0.6, 0.3], 0.5, seed=4)
    values[80:, 0] = nan
    values[10:14, 1] = nan
    ds = factor_dataset(values)

    fit = em_fit(ds, max_iter=50, tol=1e-9)
    assert np.all(np.diff(fit.loglikelihoods) >= -1e-8)
    assert fit.loglikelihood == fit.loglikelihoods[-1]


def test_em_init_truth():
    loadings = np.array([1.0, 0.8, 0.6, 0.9, 0.7])
    variances = np.full(5, 0.5)
    _, values = simulate_factor(300, loadings, variances, 0.7, seed=12)
    ds = factor_dataset(values)
    scales = np.array([np.nanstd(ds.values[:, j]) for j in range(5)])

    truth = StateSpaceModel(
        columns=ds.columns,
        loadings=loadings / scales,
        phi=0.7,
        factor_variance=1.0,
        idiosyncratic_variances=variances / scales**2,
    )
    fit = em_fit(ds, truth, tol=1e-2)
    assert fit.iterations <= 3


def test_em_preconditions(year_ds: MixedFrequencyDataset):
    with pytest.raises(DataError):
        em_fit(year_ds.select(["target"]))
    with pytest.raises(DataError):
        em_fit(year_ds)


def test_sign_convention():
    _, values = simulate_factor(120, [-1.0, 0.8, 0.6], [0.3, 0.3, 0.3], 0.6, seed=8)
    ds = factor_dataset(values)
    fit = em_fit(ds, max_iter=30)
    assert fit.loadings[np.flatnonzero(fit.loadings)[0]] > 0

    flipped = replace(fit, loadings=-fit.loadings)
    assert flipped.canonical().loadings.tolist() == fit.loadings.tolist()
    assert kalman_filter(flipped, ds).loglikelihood == pytest.approx(
        kalman_filter(fit, ds).loglikelihood, abs=1e-10
    )


def test_nowcast_noiseless_target():
    ssm = model([1.0], [1e-14], phi=0.6, columns=["target"])
    ds = MixedFrequencyDataset(
        start=Period(2020, 1),
        columns=("target",),
        frequencies=("quarterly",),
        values=np.array([[nan], [nan], [0.4], [nan], [nan], [1.5]]),
        target="target",
    )
    expected = 0.6**3 * 1.5
    assert dfm_nowcast(ssm, ds, Quarter(2020, 3)) == pytest.approx(expected, abs=1e-8)
    assert dfm_nowcast(ssm, ds, Quarter(2020, 2)) == pytest.approx(1.5, abs=1e-8)


def test_nowcast_monte_carlo():
    loadings = [0.9] * 6 + [1.0]
    variances = [0.05] * 6 + [0.3]
    columns = [f"m{j + 1}" for j in range(6)] + ["target"]
    ssm = model(loadings, variances, phi=0.7, columns=columns)
    hits = 0
    replications = 200

    for seed in range(replications):
        _, values = simulate_factor(24, loadings, variances, 0.7, seed)
        actual = values[-1, -1]
        ds = factor_dataset(values)
        withheld = ds.values.copy()
        withheld[-1, -1] = nan
        nowcast = dfm_nowcast(ssm, ds.with_values(withheld), Quarter(2001, 4))
        hits += abs(nowcast - actual) <= 2 * np.sqrt(0.3)

    assert hits >= 0.9 * replications


def test_nowcast_zero_loading_irrelevant():
    ssm = model([1.0, 0.0, 0.7], [0.3, 0.2, 0.4], columns=["m1", "m2", "target"])
    _, values = simulate_factor(18, [1.0, 0.5, 0.7], [0.3, 0.2, 0.4], 0.6, seed=1)
    ds = factor_dataset(values)

    full = dfm_nowcast(ssm, ds, Quarter(2001, 2))
    reduced = dfm_nowcast(
        ssm.select(["m1", "target"]), ds.select(["m1", "target"]), Quarter(2001, 2)
    )
    assert abs(full - reduced) < 1e-10


def test_nowcast_uses_target():
    ssm = model([1.0, 0.7], [0.3, 0.4], columns=["m1", "target"])
    _, values = simulate_factor(12, [1.0, 0.7], [0.3, 0.4], 0.6, seed=2)
    ds = factor_dataset(values)
    mutated = ds.values.copy()
    mutated[:, 1] += 2.0

    assert dfm_nowcast(ssm, ds, Quarter(2001, 1)) != dfm_nowcast(
        ssm, ds.with_values(mutated), Quarter(2001, 1)
    )


def test_nowcast_before_grid(year_ds: MixedFrequencyDataset):
    ssm = model([1.0, 0.5, 0.2], [1.0, 1.0, 1.0], columns=year_ds.columns)
    with pytest.raises(DataError):
        dfm_nowcast(ssm, year_ds, Quarter(2018, 4))


def test_save_load(tmp_path: Path):
    _, values = simulate_factor(60, [1.0, 0.8, 0.6], [0.3, 0.3, 0.3], 0.6, seed=5)
    ds = factor_dataset(values)
    fit = em_fit(ds, max_iter=20)

    path = tmp_path / "dfm.json"
    fit.save(path)
    loaded = StateSpaceModel.load(path)

    assert loaded.to_json() == fit.to_json()
    assert loaded.predict(ds, Quarter(2004, 4)) == fit.predict(ds, Quarter(2004, 4))
