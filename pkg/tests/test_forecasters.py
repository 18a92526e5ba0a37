from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from rescast.core import EPOCH, HOUR, SplitSpec, TimeSeries
from rescast.decomposer import StadConfig, removable
from rescast.errors import GapAtLag, InsufficientHistory
from rescast.features import AccessLog, build_matrix, raw_spec
from rescast.forecasters import (
    ForecastConfig,
    Forecaster,
    fit,
    fit_hybrid,
    fit_ml_direct,
    fit_scalers,
    fit_stad_direct,
    forecast,
    persistence_forecast,
    predict_rows,
    scale_dataset,
    split_dataset,
)
from rescast.ingestion import AlignedDataset, WeatherFrame
from rescast.trees import ext_predict

CFG = ForecastConfig(grid={"n_estimators": [8], "min_samples_split": [10]}, rfe_k=60, rfe_step=20, seed=5)


@pytest.fixture(scope="module")
def data():
    from rescast.synthetic import solar_like

    return solar_like(years=0.25, seed=21)


@pytest.fixture(scope="module")
def split_at(data):
    return data.start + 1600 * HOUR


@pytest.fixture(scope="module")
def parts(data, split_at):
    return split_dataset(data, SplitSpec(split_at, data.end))


@pytest.fixture(scope="module")
def models(parts):
    train, _ = parts
    return {k: fit(k, train, CFG) for k in ("persistence", "ml_direct", "stad_direct", "hybrid")}


def sinusoid_dataset(days=60):
    start = pd.Timestamp("2020-01-01", tz="UTC")
    t = ((start - EPOCH) // HOUR) + np.arange(24 * days, dtype=float)
    y = 5 + 3 * np.sin(2 * np.pi * t / 24)
    weather = WeatherFrame(start, {v: np.cos(2 * np.pi * t / 24 + k) for k, v in
                                   enumerate(["temperature", "humidity", "visibility", "wind_speed"])})
    return AlignedDataset(TimeSeries(start, y, name="solar_mw"), weather, "solar")


# -- persistence ---------------------------------------------------------------------


def test_persistence_forecast_examples():
    v = np.zeros(400)
    v[100 - 48] = 0.7
    v[300 - 168] = 0.9
    s = TimeSeries("2020-01-01", v)
    assert persistence_forecast(s, 100, 2) == 0.7
    assert persistence_forecast(s, 300, 7) == 0.9
    with pytest.raises(InsufficientHistory):
        persistence_forecast(s, 10, 2)
    gappy = s.with_values(np.where(np.arange(400) == 52, np.nan, v))
    with pytest.raises(GapAtLag):
        persistence_forecast(gappy, 100, 2)


def test_persistence_run(data, split_at, models):
    r = forecast(models["persistence"], data, (split_at, data.end))
    sd = scale_dataset(data, models["persistence"].scalers)
    i0 = data.energy.index_of(split_at)
    np.testing.assert_array_equal(r.predictions.values, sd.energy.values[i0 - 48: len(data) - 48])
    assert r.model_id == "persistence_t-2" and len(r.errors()) == len(data) - i0
    r7 = forecast(fit("persistence", parts_train(data, split_at), n_days=7), data, (split_at, data.end))
    assert r7.model_id == "persistence_t-7"


def parts_train(data, split_at):
    return data.slice_time(data.start, split_at)


# -- fitted models --------------------------------------------------------------------


def test_scalers_fitted_on_train_only(parts, models):
    train, test = parts
    p = models["ml_direct"].scalers["energy"]
    assert p.min == np.nanmin(train.energy.values) and p.max == np.nanmax(train.energy.values)


def test_constant_weather_variable_is_tolerated(parts):
    train, _ = parts
    w = dict(train.weather.variables)
    w["visibility"] = np.full(len(train), 10.0)
    scalers = fit_scalers(AlignedDataset(train.energy, WeatherFrame(train.start, w), "solar"))
    assert scalers["visibility"].transform([10.0])[0] == 0.0


def test_ml_direct_is_deterministic(parts, models):
    again = fit_ml_direct(parts[0], CFG)
    assert again.forest.to_bytes() == models["ml_direct"].forest.to_bytes()
    assert again.selection == models["ml_direct"].selection
    assert len(again.selection.kept_columns) == 60


def test_ml_direct_beats_persistence_on_held_out(data, split_at, models):
    runs = {k: forecast(models[k], data, (split_at, data.end)) for k in ("persistence", "ml_direct")}
    mask = runs["persistence"].valid_mask() & runs["ml_direct"].valid_mask()
    err = {k: r.restrict(mask).errors() for k, r in runs.items()}
    assert np.sqrt(np.mean(err["ml_direct"] ** 2)) < np.sqrt(np.mean(err["persistence"] ** 2))


def test_stad_regressors_for_wind():
    from rescast.synthetic import wind_like

    train = wind_like(years=0.1, seed=2)
    f = fit_stad_direct(train, CFG)
    names = f.stad.config.regressor_names
    for v in ("gust", "wind_speed"):
        assert all(f"{v}_p{k}" in names for k in range(1, 25))
        assert f"{v}_m72" in names and f"{v}_m48" in names
    assert "lag_48" in names and "lag_72" in names and "roll_mean" in names


def test_stad_without_regressors_and_sinusoid():
    d = sinusoid_dataset()
    f = fit_stad_direct(d, replace(CFG, use_regressors=False))
    assert f.stad.config.regressor_names == () and f.regressor_spec is None
    r = forecast(f, d)
    # the default penalties shrink the amplitude very slightly
    assert np.abs(r.errors()).max() < 5e-3


def test_hybrid_on_seasonal_signal_follows_seasonality():
    d = sinusoid_dataset()
    train = d.slice_time(d.start, d.start + 40 * 24 * HOUR)
    f = fit_hybrid(train, replace(CFG, use_regressors=False))
    r = forecast(f, d, (train.end, d.end))
    sd = scale_dataset(d, f.scalers)
    rows = np.arange(d.energy.index_of(train.end), len(d))
    _, stages = predict_rows(f, sd, rows)
    ok = ~np.isnan(stages.residual)
    assert np.ptp(stages.residual[ok]) < 1e-2
    assert np.abs(r.errors()).max() < 1e-2


def test_hybrid_reconstruction_matches_manual_composition(data, split_at, models):
    f = models["hybrid"]
    sd = scale_dataset(data, f.scalers)
    rows = np.arange(data.energy.index_of(split_at), data.energy.index_of(split_at) + 50)
    pred, stages = predict_rows(f, sd, rows)
    np.testing.assert_array_equal(pred, stages.residual + stages.seasonal)
    M = build_matrix(sd, f.feature_spec, rows=rows).select(f.selection.kept_columns)
    R = build_matrix(sd, f.regressor_spec, rows=rows).X
    assert len(M) == len(rows) == len(R)
    np.testing.assert_array_equal(stages.residual, ext_predict(f.forest, M.X))
    hours = (M.timestamps - EPOCH) // HOUR
    np.testing.assert_allclose(stages.seasonal, removable(f.stad, np.asarray(hours, dtype=float), R),
                               rtol=0, atol=1e-12)


def test_zero_weight_hybrid_equals_ml_direct(data, split_at, models):
    h, ml = models["hybrid"], models["ml_direct"]
    zeroed = replace(h.stad, weights=np.zeros_like(h.stad.weights))
    degenerate = Forecaster("hybrid", h.energy_type, ml.scalers, feature_spec=ml.feature_spec,
                            selection=ml.selection, regressor_spec=h.regressor_spec, stad=zeroed,
                            forest=ml.forest)
    a = forecast(degenerate, data, (split_at, data.end)).predictions.values
    b = forecast(ml, data, (split_at, data.end)).predictions.values
    assert np.nanmax(np.abs(a - b)) <= 1e-9
    np.testing.assert_array_equal(np.isnan(a), np.isnan(b))


def test_runs_share_actuals_and_skip_tail(data, split_at, models):
    runs = [forecast(m, data, (split_at, data.end)) for m in models.values()]
    for r in runs[1:]:
        np.testing.assert_array_equal(r.actuals.values, runs[0].actuals.values)
    for r in runs:
        # only the final hours can lack the weather leads of the selected columns
        if r.skipped:
            assert len(r.skipped) <= 24 and r.skipped[-1] == data.end - HOUR
            assert r.skipped[0] == data.end - len(r.skipped) * HOUR


@pytest.mark.parametrize("kind", ["persistence", "ml_direct", "stad_direct", "hybrid"])
def test_availability_audit(data, split_at, models, kind):
    log = AccessLog()
    forecast(models[kind], data, (split_at, split_at + 100 * HOUR), access_log=log)
    assert len(log.records) == 100
    assert log.violations() == []
    assert any(e is not None for _, e, _ in log.records)


@pytest.mark.parametrize("kind", ["persistence", "ml_direct", "stad_direct", "hybrid"])
def test_save_load_round_trip(tmp_path, data, split_at, models, kind):
    f = models[kind]
    f.save(tmp_path / kind)
    g = Forecaster.load(tmp_path / kind)
    assert (g.kind, g.model_id, g.energy_type) == (f.kind, f.model_id, f.energy_type)
    a = forecast(f, data, (split_at, data.end)).predictions.values
    b = forecast(g, data, (split_at, data.end)).predictions.values
    np.testing.assert_array_equal(a, b)
    if f.forest is not None:
        assert (tmp_path / kind / "forest.npz").read_bytes() == f.forest.to_bytes()
        assert g.grid.best == f.grid.best


def test_feature_engineering_switch(parts):
    cfg = replace(CFG, feature_engineering=False)
    f = fit_ml_direct(parts[0], cfg)
    assert f.model_id == "ml_direct_nofe" and f.feature_spec == raw_spec()
    assert f.selection.kept_columns == raw_spec().columns()
    s = cfg.stad_for("solar")[0]
    assert s.daypart_bounds == () and all(b[0] != "biseasonal" for b in s.seasonal_blocks)


def test_config_round_trip():
    cfg = replace(CFG, stad=StadConfig(n_changepoints=5), rfe_k=10)
    assert ForecastConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        Forecaster("bogus", "solar", {})
