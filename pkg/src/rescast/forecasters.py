"""Persistence, direct Extra-Trees, direct decomposer and hybrid forecasters.

All models are fitted once on the training split and then walked forward
hour by hour over the evaluation span without refitting. Every feature read
during forecasting goes through :class:`~rescast.features.GuardedAccess`, so
energy is never read later than ``t - 48 h`` nor weather later than
``t + 24 h``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from rescast.core import HOUR, ScalerParams, SplitSpec, TimeSeries, minmax_fit, split
from rescast.decomposer import StadConfig, StadModel, removable, stad_components, stad_fit
from rescast.errors import ConstantSeries, GapAtLag, InsufficientHistory
from rescast.evaluation import ForecastRun
from rescast.features import (
    AccessLog,
    FeatureSpec,
    GuardedAccess,
    SelectionResult,
    build_matrix,
    canonical_spec,
    feature_block,
    raw_spec,
    regressor_spec,
    rfe,
)
from rescast.ingestion import AlignedDataset, EnergyType, WeatherFrame
from rescast.trees import DEFAULT_GRID, ExtParams, Forest, GridResult, ext_fit, ext_predict, grid_search

log = logging.getLogger(__name__)

KINDS = ("persistence", "ml_direct", "stad_direct", "hybrid")
RFE_TARGETS = {EnergyType.SOLAR: 150, EnergyType.WIND: 160}


@dataclass(frozen=True)
class ForecastConfig:
    """Training recipe shared by the model families."""

    feature_engineering: bool = True
    feature_spec: Optional[FeatureSpec] = None  # None: canonical_spec(energy_type)
    rfe_k: Optional[int] = None  # None: 150 for solar, 160 for wind
    rfe_step: int = 2
    ridge_lambda: float = 1.0
    grid: Dict[str, list] = field(default_factory=lambda: dict(DEFAULT_GRID))
    val_fraction: float = 0.2
    stad: StadConfig = StadConfig()
    use_regressors: bool = True
    seed: int = 0
    n_jobs: int = 1

    def spec_for(self, energy_type) -> FeatureSpec:
        if not self.feature_engineering:
            return raw_spec()
        return self.feature_spec or canonical_spec(energy_type)

    def stad_for(self, energy_type) -> Tuple[StadConfig, Optional[FeatureSpec]]:
        if not self.feature_engineering:
            # plain decomposer: default seasonalities only, no regressors
            blocks = tuple(b for b in self.stad.seasonal_blocks if b[0] != "biseasonal")
            return replace(self.stad, seasonal_blocks=blocks, daypart_bounds=(),
                           regressor_names=()), None
        if not self.use_regressors:
            return replace(self.stad, regressor_names=()), None
        spec = regressor_spec(energy_type)
        return replace(self.stad, regressor_names=tuple(spec.columns())), spec

    def to_dict(self) -> dict:
        return {
            "feature_engineering": self.feature_engineering,
            "feature_spec": self.feature_spec.to_dict() if self.feature_spec else None,
            "rfe_k": self.rfe_k,
            "rfe_step": self.rfe_step,
            "ridge_lambda": self.ridge_lambda,
            "grid": self.grid,
            "val_fraction": self.val_fraction,
            "stad": self.stad.to_dict(),
            "use_regressors": self.use_regressors,
            "seed": self.seed,
            "n_jobs": self.n_jobs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastConfig":
        d = dict(d)
        if d.get("feature_spec"):
            d["feature_spec"] = FeatureSpec.from_dict(d["feature_spec"])
        if "stad" in d:
            d["stad"] = StadConfig.from_dict(d["stad"])
        return cls(**d)


@dataclass(eq=False)
class Forecaster:
    kind: str
    energy_type: EnergyType
    scalers: Dict[str, ScalerParams]
    model_id: str = ""
    n_days: Optional[int] = None
    feature_spec: Optional[FeatureSpec] = None
    selection: Optional[SelectionResult] = None
    regressor_spec: Optional[FeatureSpec] = None
    stad: Optional[StadModel] = None
    forest: Optional[Forest] = None
    grid: Optional[GridResult] = None
    timings: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown forecaster kind {self.kind!r}")
        self.energy_type = EnergyType(self.energy_type)
        if not self.model_id:
            self.model_id = f"persistence_t-{self.n_days}" if self.kind == "persistence" else self.kind

    # -- persistence to disk --

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {
            "format": "rescast-forecaster",
            "version": 1,
            "kind": self.kind,
            "model_id": self.model_id,
            "energy_type": self.energy_type.value,
            "n_days": self.n_days,
            "scalers": {k: v.to_dict() for k, v in self.scalers.items()},
            "feature_spec": self.feature_spec.to_dict() if self.feature_spec else None,
            "regressor_spec": self.regressor_spec.to_dict() if self.regressor_spec else None,
            "artifacts": [],
        }
        if self.selection is not None:
            (d / "selection.json").write_text(self.selection.to_json())
            manifest["artifacts"].append("selection.json")
        if self.stad is not None:
            (d / "stad.json").write_text(self.stad.to_json())
            manifest["artifacts"].append("stad.json")
        if self.forest is not None:
            (d / "forest.npz").write_bytes(self.forest.to_bytes())
            manifest["artifacts"].append("forest.npz")
        if self.grid is not None:
            (d / "grid.json").write_text(self.grid.to_json())
            manifest["artifacts"].append("grid.json")
        (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return d

    @classmethod
    def load(cls, directory) -> "Forecaster":
        d = Path(directory)
        m = json.loads((d / "manifest.json").read_text())
        f = cls(
            kind=m["kind"],
            energy_type=m["energy_type"],
            scalers={k: ScalerParams(**v) for k, v in m["scalers"].items()},
            model_id=m["model_id"],
            n_days=m.get("n_days"),
            feature_spec=FeatureSpec.from_dict(m["feature_spec"]) if m.get("feature_spec") else None,
            regressor_spec=FeatureSpec.from_dict(m["regressor_spec"]) if m.get("regressor_spec") else None,
        )
        if (d / "selection.json").exists():
            f.selection = SelectionResult.from_json((d / "selection.json").read_text())
        if (d / "stad.json").exists():
            f.stad = StadModel.from_json((d / "stad.json").read_text())
        if (d / "forest.npz").exists():
            f.forest = Forest.from_bytes((d / "forest.npz").read_bytes())
        if (d / "grid.json").exists():
            f.grid = GridResult.from_json((d / "grid.json").read_text())
        return f


# -- scaling ---------------------------------------------------------------------


def fit_scalers(train: AlignedDataset) -> Dict[str, ScalerParams]:
    out = {"energy": minmax_fit(train.energy)}
    for name, vals in train.weather.variables.items():
        try:
            out[name] = minmax_fit(TimeSeries(train.start, vals, name=name))
        except ConstantSeries:
            # a flat training variable carries no information; keep it unscaled
            v = float(np.nanmin(vals))
            out[name] = ScalerParams(v, v + 1.0)
    return out


def scale_dataset(data: AlignedDataset, scalers: Dict[str, ScalerParams]) -> AlignedDataset:
    energy = data.energy.with_values(scalers["energy"].transform(data.energy.values), unit="scaled")
    weather = WeatherFrame(
        data.start,
        {k: scalers[k].transform(v) if k in scalers else v for k, v in data.weather.variables.items()},
    )
    return AlignedDataset(energy, weather, data.energy_type)


def split_dataset(data: AlignedDataset, spec: SplitSpec) -> Tuple[AlignedDataset, AlignedDataset]:
    split(data.energy, spec)  # validates the boundaries
    return (data.slice_time(data.start, spec.train_end),
            data.slice_time(spec.train_end, spec.test_end))


# -- fitting ---------------------------------------------------------------------


class _Timer:
    def __init__(self, sink: Dict[str, float], name: str):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.t = time.perf_counter()

    def __exit__(self, *exc):
        self.sink[self.name] = time.perf_counter() - self.t
        log.info("stage %s took %.2fs", self.name, self.sink[self.name])


def fit_persistence(train: AlignedDataset, n_days: int = 2) -> Forecaster:
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    return Forecaster("persistence", train.energy_type, fit_scalers(train), n_days=n_days)


def _regressors(data: AlignedDataset, spec: Optional[FeatureSpec], rows: np.ndarray,
                acc_log: Optional[AccessLog] = None) -> Optional[np.ndarray]:
    if spec is None:
        return None
    acc = GuardedAccess(data.energy.values, data.weather.variables, data.start, rows, acc_log)
    out = feature_block(acc, spec)
    acc.flush()
    return out


def _fit_stad(sd: AlignedDataset, cfg: ForecastConfig) -> Tuple[StadModel, Optional[FeatureSpec], Optional[np.ndarray]]:
    stad_cfg, reg_spec = cfg.stad_for(sd.energy_type)
    R = _regressors(sd, reg_spec, np.arange(len(sd)))
    return stad_fit(sd.energy, R, stad_cfg), reg_spec, R


def _fit_trees(M, cfg: ForecastConfig, energy_type, timings) -> Tuple[SelectionResult, GridResult, Forest]:
    with _Timer(timings, "rfe"):
        if cfg.feature_engineering:
            k = min(cfg.rfe_k or RFE_TARGETS[EnergyType(energy_type)], M.width)
            sel = rfe(M, k=k, step=cfg.rfe_step, lam=cfg.ridge_lambda, val_fraction=cfg.val_fraction)
        else:
            sel = SelectionResult(list(M.columns), [])
    Ms = M.select(sel.kept_columns)
    base = ExtParams(seed=cfg.seed)
    with _Timer(timings, "grid_search"):
        grid = grid_search(cfg.grid, Ms.X, Ms.target, cfg.val_fraction, base=base, n_jobs=cfg.n_jobs)
    with _Timer(timings, "ext_fit"):
        forest = ext_fit(Ms.X, Ms.target, grid.best, n_jobs=cfg.n_jobs)
    return sel, grid, forest


def fit_ml_direct(train: AlignedDataset, cfg: ForecastConfig = ForecastConfig()) -> Forecaster:
    timings: Dict[str, float] = {}
    scalers = fit_scalers(train)
    sd = scale_dataset(train, scalers)
    spec = cfg.spec_for(train.energy_type)
    with _Timer(timings, "build_matrix"):
        M = build_matrix(sd, spec)
    sel, grid, forest = _fit_trees(M, cfg, train.energy_type, timings)
    return Forecaster("ml_direct", train.energy_type, scalers,
                      model_id="ml_direct" if cfg.feature_engineering else "ml_direct_nofe",
                      feature_spec=spec, selection=sel, forest=forest, grid=grid, timings=timings)


def fit_stad_direct(train: AlignedDataset, cfg: ForecastConfig = ForecastConfig()) -> Forecaster:
    timings: Dict[str, float] = {}
    scalers = fit_scalers(train)
    sd = scale_dataset(train, scalers)
    with _Timer(timings, "stad_fit"):
        model, reg_spec, _ = _fit_stad(sd, cfg)
    return Forecaster("stad_direct", train.energy_type, scalers,
                      model_id="stad_direct" if cfg.feature_engineering else "stad_direct_nofe",
                      regressor_spec=reg_spec, stad=model, timings=timings)


def fit_hybrid(train: AlignedDataset, cfg: ForecastConfig = ForecastConfig()) -> Forecaster:
    """Decompose, fit Extra-Trees on the deseasoned series, keep both for forecasting."""
    timings: Dict[str, float] = {}
    scalers = fit_scalers(train)
    sd = scale_dataset(train, scalers)
    with _Timer(timings, "stad_fit"):
        model, reg_spec, R = _fit_stad(sd, cfg)
    residual = sd.energy.values - removable(model, sd.energy, R)
    spec = cfg.spec_for(train.energy_type)
    with _Timer(timings, "build_matrix"):
        M = build_matrix(sd, spec)
    rows = np.asarray((M.timestamps - sd.start) // HOUR, dtype=np.int64)
    M = M.with_target(residual[rows])
    M = M.rows(~np.isnan(M.target))
    sel, grid, forest = _fit_trees(M, cfg, train.energy_type, timings)
    return Forecaster("hybrid", train.energy_type, scalers,
                      model_id="hybrid" if cfg.feature_engineering else "hybrid_nofe",
                      feature_spec=spec, selection=sel, regressor_spec=reg_spec, stad=model,
                      forest=forest, grid=grid, timings=timings)


def fit(kind: str, train: AlignedDataset, cfg: ForecastConfig = ForecastConfig(),
        n_days: int = 2) -> Forecaster:
    if kind == "persistence":
        return fit_persistence(train, n_days)
    return {"ml_direct": fit_ml_direct, "stad_direct": fit_stad_direct, "hybrid": fit_hybrid}[kind](train, cfg)


# -- forecasting -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Stages:
    """Per-hour intermediate values of one walk-forward run."""

    residual: Optional[np.ndarray] = None
    seasonal: Optional[np.ndarray] = None


def _tree_features(f: Forecaster, acc: GuardedAccess) -> np.ndarray:
    X = feature_block(acc, f.feature_spec)
    pos = {c: i for i, c in enumerate(f.feature_spec.columns())}
    return X[:, [pos[c] for c in f.selection.kept_columns]]


def _predict_trees(forest: Forest, X: np.ndarray) -> np.ndarray:
    out = np.full(len(X), np.nan)
    ok = ~np.isnan(X).any(axis=1)
    if ok.any():
        out[ok] = ext_predict(forest, X[ok])
    return out


def predict_rows(f: Forecaster, sd: AlignedDataset, rows: np.ndarray,
                 access_log: Optional[AccessLog] = None) -> Tuple[np.ndarray, Stages]:
    """Scaled forecasts for target positions ``rows`` of the scaled dataset ``sd``."""
    rows = np.asarray(rows, dtype=np.int64)
    acc = GuardedAccess(sd.energy.values, sd.weather.variables, sd.start, rows, access_log)
    stages = Stages()
    if f.kind == "persistence":
        pred = acc.energy_at([-24 * f.n_days])[:, 0]
    elif f.kind == "ml_direct":
        pred = _predict_trees(f.forest, _tree_features(f, acc))
    else:
        R = feature_block(acc, f.regressor_spec) if f.regressor_spec is not None else None
        hours = acc.hours()
        if f.kind == "stad_direct":
            pred = stad_components(f.stad, hours, R).fitted.values
        else:
            seasonal = removable(f.stad, hours, R)
            residual = _predict_trees(f.forest, _tree_features(f, acc))
            pred = residual + seasonal
            stages = Stages(residual=residual, seasonal=seasonal)
    acc.flush()
    return pred, stages


def forecast(f: Forecaster, data: AlignedDataset, span=None,
             access_log: Optional[AccessLog] = None) -> ForecastRun:
    """Walk forward over ``span = (begin, end)`` of ``data`` (raw units).

    ``data`` must include the history the features need before ``begin``.
    Hours whose inputs are missing are reported in ``skipped`` and left NaN.
    """
    begin, end = span if span is not None else (data.start, data.end)
    begin, end = pd.Timestamp(begin), pd.Timestamp(end)
    sd = scale_dataset(data, f.scalers)
    i0, i1 = data.energy.index_of(begin), data.energy.index_of(end)
    if i0 < 0 or i1 > len(data) or i0 >= i1:
        raise ValueError(f"span [{begin}, {end}) is not inside the data")
    pred, _ = predict_rows(f, sd, np.arange(i0, i1), access_log)
    actual = sd.energy.values[i0:i1]
    start = data.start + i0 * HOUR
    skipped = tuple(start + int(i) * HOUR for i in np.flatnonzero(np.isnan(pred)))
    if skipped:
        log.info("%s: %d hours skipped for missing inputs", f.model_id, len(skipped))
    return ForecastRun(
        TimeSeries(start, pred, name=f.model_id, unit="scaled"),
        TimeSeries(start, actual, name="actual", unit="scaled"),
        f.model_id,
        f.energy_type.value,
        skipped,
    )


def persistence_forecast(history: TimeSeries, t: int, n_days: int) -> float:
    """``y[t - 24 * n_days]``."""
    lag = 24 * n_days
    if t - lag < 0:
        raise InsufficientHistory(f"index {t} has no value {lag} h earlier")
    v = history.values[t - lag]
    if np.isnan(v):
        raise GapAtLag(f"gap at index {t - lag}")
    return float(v)
