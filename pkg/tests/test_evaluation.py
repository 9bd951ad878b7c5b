from datetime import date, timedelta
from pathlib import Path
from typing import List

import numpy as np
import pytest

from nowcaster import (
    ConstantNowcaster,
    CurvePoint,
    DegenerateTestError,
    EvaluationError,
    PredictionCurve,
    Quarter,
    Simulation,
    StateSpaceModel,
    anchor,
    day_difference,
    evaluate,
    mae,
    one_tailed_t_test,
    read_curves,
    replay,
    revision_stats,
    rmse,
    significance_stars,
    write_curves,
)


def curve(model: str, predictions: List[float], actual: float = 0.0) -> PredictionCurve:
    target = Quarter(2020, 2)
    days = [date(2020, 5, 4) + timedelta(days=7 * i) for i in range(len(predictions))]
    return PredictionCurve(
        model,
        target,
        tuple(
            CurvePoint(day, day_difference(day, target), prediction)
            for day, prediction in zip(days, predictions)
        ),
        actual,
    )


def test_anchor():
    assert anchor(Quarter(2020, 2)) == date(2020, 6, 1)
    assert anchor(Quarter(2019, 4)) == date(2019, 12, 1)


def test_day_difference():
    assert day_difference(date(2020, 5, 2), Quarter(2020, 2)) == -30
    assert day_difference(date(2020, 6, 1), Quarter(2020, 2)) == 0
    assert day_difference(date(2020, 7, 1), "2020Q2") == 30


def test_curve_invariants():
    target = Quarter(2020, 2)
    point = CurvePoint(date(2020, 6, 1), 0, 1.0)
    with pytest.raises(EvaluationError):
        PredictionCurve("x", target, (point, point))
    with pytest.raises(EvaluationError):
        PredictionCurve("x", target, (CurvePoint(date(2020, 6, 1), 3, 1.0),))
    with pytest.raises(EvaluationError):
        PredictionCurve("x", target, (point,)).errors


def test_errors():
    assert mae(curve("x", [0.01, -0.01])) == pytest.approx(0.01)
    assert rmse(curve("x", [0.01, -0.01])) == pytest.approx(0.01)
    assert mae(curve("x", [0.0, 0.02])) == pytest.approx(0.01)
    assert rmse(curve("x", [0.0, 0.02])) == pytest.approx(np.sqrt(2) / 100)


def test_rmse_bounds_mae():
    rng = np.random.default_rng(0)
    for _ in range(20):
        predictions = list(rng.normal(size=int(rng.integers(1, 10))))
        c = curve("x", predictions, float(rng.normal()))
        assert rmse(c) >= mae(c) - 1e-15


def test_t_test():
    result = one_tailed_t_test([3, 3, 3, 3], [1, 2, 2, 3])
    assert result.statistic == pytest.approx(-2.449, abs=1e-3)
    assert result.df == 3
    assert result.pvalue == pytest.approx(0.046, abs=1e-3)


def test_t_test_uses_absolute_errors():
    assert one_tailed_t_test([-3, 3, -3, 3], [1, -2, 2, -3]) == one_tailed_t_test(
        [3, 3, 3, 3], [1, 2, 2, 3]
    )


def test_t_test_degenerate():
    with pytest.raises(DegenerateTestError):
        one_tailed_t_test([1, 2, 3], [2, 3, 4])
    with pytest.raises(EvaluationError):
        one_tailed_t_test([1, 2], [2, 1])
    with pytest.raises(EvaluationError):
        one_tailed_t_test([1, 2, 3], [2, 1])


def test_significance_stars():
    assert significance_stars(0.0005) == "***"
    assert significance_stars(0.005) == "**"
    assert significance_stars(0.03) == "*"
    assert significance_stars(0.2) == ""


def test_revision_stats():
    stats = revision_stats(curve("dfm", [0, 4, 4]), curve("lstm", [0, 1, 2]))
    assert stats.share_a_bigger == 0.5
    assert stats.share_b_bigger == 0.5
    assert stats.avg_abs_rev_a == 2.0
    assert stats.avg_abs_rev_b == 1.0


def test_revision_stats_unpaired():
    with pytest.raises(EvaluationError):
        revision_stats(curve("dfm", [0, 4, 4]), curve("lstm", [0, 1]))
    with pytest.raises(EvaluationError):
        revision_stats(curve("dfm", [0]), curve("lstm", [1]))


def test_evaluate():
    result = evaluate([curve("dfm", [3, 3, 3, 3]), curve("lstm", [1, 2, 2, 3])])
    assert result.mae == {"dfm": 3.0, "lstm": 2.0}
    assert result.t_test is not None
    assert result.t_test.df == 3
    assert result.revisions is not None
    assert result.revisions.avg_abs_rev_a == 0.0

    data = result.to_json()
    assert data["t_test"]["stars"] == "*"
    assert data["revisions"]["share_b_bigger"] == 2 / 3


def test_evaluate_single_model():
    result = evaluate([curve("lstm", [1, 2])])
    assert result.t_test is None
    assert result.revisions is None
    assert result.rmse == {"lstm": pytest.approx(np.sqrt(2.5))}


def test_evaluate_degenerate_test():
    result = evaluate([curve("dfm", [1, 2, 3]), curve("lstm", [2, 3, 4])])
    assert result.t_test is None
    assert result.revisions is not None


def test_evaluate_benchmark():
    curves = [
        curve("lstm", [1, 2, 2, 3]),
        curve("dfm", [3, 3, 3, 3]),
        curve("naive", [4, 4, 4, 4]),
    ]
    result = evaluate(curves, benchmark="naive")
    assert result.mae["naive"] == 4.0

    data = result.to_json()
    assert data["models"] == ["lstm", "dfm"]
    assert data["mae"] == {"lstm": 2.0, "dfm": 3.0}
    assert data["benchmark"] == {"model": "naive", "mae": 4.0, "rmse": 4.0}
    assert [item["model"] for item in data["curves"]] == ["lstm", "dfm", "naive"]

    assert evaluate(curves[:2], benchmark="naive").to_json()["benchmark"] is None


def test_evaluate_empty():
    with pytest.raises(EvaluationError):
        evaluate([])


def test_replay(simulation: Simulation, fitted_dfm: StateSpaceModel):
    target = Quarter(2013, 2)
    curves = replay(
        simulation.store,
        {"dfm": fitted_dfm, "constant": ConstantNowcaster(0.0)},
        target,
    )
    window = [
        day
        for day in simulation.store.dates
        if abs((day - date(2013, 6, 1)).days) <= 100
    ]

    assert [c.model for c in curves] == ["dfm", "constant"]
    for c in curves:
        assert c.dates == window
        assert c.actual == simulation.store.latest.get(target.end, "target")
        assert [point.day_difference for point in c.points] == [
            (day - date(2013, 6, 1)).days for day in window
        ]
    assert set(curves[1].predictions) == {0.0}


def test_replay_errors(simulation: Simulation):
    models = {"constant": ConstantNowcaster(0.0)}
    with pytest.raises(EvaluationError):
        replay(simulation.store, models, Quarter(2005, 1))
    with pytest.raises(EvaluationError):
        replay(simulation.store, models, Quarter(2013, 2), window_days=0)


def test_replay_actual_override(simulation: Simulation):
    [c] = replay(simulation.store, {"c": ConstantNowcaster(1.0)}, "2013Q2", actual=0.25)
    assert c.actual == 0.25
    assert mae(c) == 0.75


def test_write_read_curves(tmp_path: Path):
    path = tmp_path / "curves.csv"
    curves = [curve("dfm", [0.1, 1 / 3]), curve("lstm", [0.2, 2 / 3])]
    write_curves(curves, path, {"seed": 3, "config_hash": "abc"})

    assert path.read_text().startswith("# seed=3\n# config_hash=abc\nmodel,")
    frame = read_curves(path)
    assert frame.columns.tolist() == [
        "model",
        "target_period",
        "asof_date",
        "day_difference",
        "prediction",
        "actual",
    ]
    assert frame["model"].tolist() == ["dfm", "dfm", "lstm", "lstm"]
    assert frame["prediction"].tolist() == [0.1, 1 / 3, 0.2, 2 / 3]
    assert frame["day_difference"].tolist() == [-28, -21, -28, -21]
