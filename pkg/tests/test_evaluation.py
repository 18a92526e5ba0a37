import json

import jsonschema
import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rescast.core import HOUR, TimeSeries
from rescast.errors import EmptyRun, MixedEnergyTypes
from rescast.evaluation import (
    REPORT_SCHEMA,
    EvaluationReport,
    ForecastRun,
    common_support,
    compare,
    error_intervals,
    evaluate,
    heatmap,
    heatmap_svg,
    mae,
    rmse,
    write_comparison,
    write_heatmap_csv,
)

T0 = pd.Timestamp("2020-01-01", tz="UTC")
errors_st = arrays(np.float64, st.integers(1, 300), elements=st.floats(-2, 2))


def run(pred, actual, model="m", etype="solar"):
    return ForecastRun(TimeSeries(T0, pred), TimeSeries(T0, actual), model, etype)


def test_metric_examples():
    assert mae(np.array([0.1, 0.3])) == pytest.approx(0.2)
    assert rmse(np.array([3.0, 4.0])) == pytest.approx(np.sqrt(12.5))
    assert rmse(np.full(5, 0.7)) == pytest.approx(0.7)
    r = run([1.0, 2.0], [1.0, 2.0])
    assert mae(r) == 0.0 and rmse(r) == 0.0


def test_interval_examples():
    e = np.array([0.05, 0.12, 0.20, 0.08])
    assert error_intervals(e) == {"under_10": 50.0, "between_10_15": 25.0, "over_15": 25.0}
    assert error_intervals(np.zeros(4)) == {"under_10": 100.0, "between_10_15": 0.0, "over_15": 0.0}
    # boundaries belong to the middle bucket
    assert error_intervals(np.array([0.10, -0.15]))["between_10_15"] == 100.0


def test_empty_run():
    r = run([np.nan, 1.0], [1.0, np.nan])
    for fn in (mae, rmse, error_intervals, evaluate):
        with pytest.raises(EmptyRun):
            fn(r)


@given(errors_st)
def test_metric_properties(e):
    assert rmse(e) >= mae(e) * (1 - 1e-12) >= 0
    pct = error_intervals(e)
    assert abs(sum(pct.values()) - 100.0) <= 1e-9
    perm = np.random.default_rng(0).permutation(len(e))
    assert mae(e[perm]) == pytest.approx(mae(e), rel=1e-12)
    assert error_intervals(e[perm]) == pct


def test_rmse_equals_mae_iff_equal_magnitudes():
    assert rmse(np.array([0.2, -0.2, 0.2])) == pytest.approx(mae(np.array([0.2, -0.2, 0.2])), rel=1e-15)
    assert rmse(np.array([0.1, 0.3])) > mae(np.array([0.1, 0.3]))


def test_run_requires_shared_span():
    with pytest.raises(ValueError):
        ForecastRun(TimeSeries(T0, [1.0]), TimeSeries(T0 + HOUR, [1.0]), "m", "solar")


def test_evaluate_report_validates(rng):
    a = rng.random(100)
    rep = evaluate(run(a + rng.normal(0, 0.1, 100), a))
    assert rep.n_hours == 100 and rep.rmse >= rep.mae
    jsonschema.validate(json.loads(rep.to_json()), REPORT_SCHEMA)


def test_common_support_and_compare(tmp_path):
    a = np.linspace(0, 1, 10)
    p1 = a.copy()
    p1[2] = np.nan
    runs = common_support([run(p1, a, "persistence_t-2"), run(a + 0.05, a, "ml_direct"),
                           run(a + 0.01, a, "hybrid")])
    assert all(np.isnan(r.predictions.values[2]) for r in runs)
    reps = [evaluate(r) for r in runs]
    assert {r.n_hours for r in reps} == {9}
    rows = compare(reps)
    assert [r["model_id"] for r in rows] == ["persistence_t-2", "hybrid", "ml_direct"]
    assert sorted(r["model_id"] for r in rows) == sorted(r.model_id for r in reps)
    assert len(compare(reps[:1])) == 1
    write_comparison(rows, tmp_path / "c.csv", tmp_path / "c.json")
    assert pd.read_csv(tmp_path / "c.csv")["model_id"].tolist() == [r["model_id"] for r in rows]
    assert json.loads((tmp_path / "c.json").read_text()) == rows


def test_compare_rejects_mixed_types():
    reps = [EvaluationReport("a", "solar", 0.1, 0.2, {}, 1), EvaluationReport("b", "wind", 0.1, 0.2, {}, 1)]
    with pytest.raises(MixedEnergyTypes):
        compare(reps)


def test_run_csv_round_trip(tmp_path, rng):
    r = run(rng.random(30), rng.random(30), "hybrid")
    r.to_csv(tmp_path / "r.csv")
    back = ForecastRun.from_csv(tmp_path / "r.csv", "hybrid", "solar")
    np.testing.assert_array_equal(back.predictions.values, r.predictions.values)
    assert back.actuals.start == T0


def test_heatmap_constant_and_shape():
    s = TimeSeries(T0, np.full(24 * 400, 0.4))
    np.testing.assert_allclose(heatmap(s), 0.4, rtol=1e-15)
    short = heatmap(TimeSeries(T0, np.ones(5)))
    assert short.shape == (12, 24) and np.isnan(short[1:]).all() and np.isnan(short[0, 5:]).all()


def test_heatmap_brute_force_oracle(rng):
    start = pd.Timestamp("2019-12-20T05:00", tz="UTC")
    v = rng.random(1000)
    v[rng.random(1000) < 0.1] = np.nan
    s = TimeSeries(start, v)
    got = heatmap(s)
    frame = pd.DataFrame({"v": v, "m": s.timestamps.month, "h": s.timestamps.hour}).dropna()
    want = np.full((12, 24), np.nan)
    for (m, h), grp in frame.groupby(["m", "h"]):
        want[m - 1, h] = grp["v"].mean()
    np.testing.assert_allclose(got, want, rtol=1e-12, equal_nan=True)


def test_heatmap_outputs(tmp_path):
    m = heatmap(TimeSeries(T0, np.arange(24 * 40, dtype=float) % 24))
    write_heatmap_csv(m, tmp_path / "h.csv")
    frame = pd.read_csv(tmp_path / "h.csv", index_col="month")
    assert frame.shape == (12, 24)
    svg = heatmap_svg(m, title="demo")
    assert svg.startswith("<svg") and svg.count("<rect") == 288
