"""Seasonal-trend additive decomposer.

Models ``y(t) = g(t) + s(t) + h(t) + r(t) + e(t)`` with a piecewise-linear
trend ``g``, Fourier seasonal blocks plus time-of-day indicators ``s``,
holiday effects ``h`` and linear external-regressor effects ``r`` (zero when
no regressors are configured). All weights come from one penalized
least-squares solve, with a separate ridge penalty per block.

Time is measured in hours since 1970-01-01 UTC, so every Fourier block is
phase-locked to the calendar.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from rescast.core import EPOCH, HOUR, TimeSeries
from rescast.errors import MisalignedRegressors, MissingRegressors, SingularSystem

DEFAULT_BLOCKS = (
    ("daily", 24.0, 6),
    ("weekly", 168.0, 3),
    ("yearly", 8766.0, 10),
    ("biseasonal", 4383.0, 2),
)
DEFAULT_DAYPARTS = (
    ("sunrise", 5, 8),
    ("morning", 8, 12),
    ("noon", 12, 16),
    ("sunset", 16, 20),
    ("night", 20, 5),
)


def _hours(stamps) -> np.ndarray:
    if isinstance(stamps, TimeSeries):
        return stamps.hours_since_epoch()
    if isinstance(stamps, pd.DatetimeIndex):
        idx = stamps.tz_localize("UTC") if stamps.tz is None else stamps.tz_convert("UTC")
        return np.asarray((idx - EPOCH) // HOUR, dtype=float)
    return np.asarray(stamps, dtype=float)


def fourier_basis(t, period: float, order: int) -> np.ndarray:
    """Columns ``sin(2πkt/P), cos(2πkt/P)`` for ``k = 1..order``, interleaved.

    The phase is reduced modulo the period first, which makes the basis exactly
    periodic: rows for ``t`` and ``t + period`` are bit-identical.
    """
    if period <= 0 or order < 1:
        raise ValueError("period must be positive and order >= 1")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    phase = np.fmod(t, period)
    phase[phase < 0] += period
    out = np.empty((len(t), 2 * order))
    for k in range(1, order + 1):
        angle = 2 * np.pi * np.fmod(k * phase, period) / period
        out[:, 2 * k - 2] = np.sin(angle)
        out[:, 2 * k - 1] = np.cos(angle)
    return out


def trend_basis(t, changepoints: Sequence[float]) -> np.ndarray:
    """Columns ``1, t, max(0, t - c_1), ..., max(0, t - c_m)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    cps = np.asarray(changepoints, dtype=float)
    if cps.size and np.any(np.diff(cps) < 0):
        raise ValueError("changepoints must be sorted")
    out = np.empty((len(t), cps.size + 2))
    out[:, 0] = 1.0
    out[:, 1] = t
    if cps.size:
        out[:, 2:] = np.maximum(0.0, t[:, None] - cps[None, :])
    return out


def daypart_basis(t, bounds) -> np.ndarray:
    """Indicator column per daypart ``(name, first hour, end hour)``; ranges may wrap midnight."""
    hod = np.fmod(np.atleast_1d(np.asarray(t, dtype=float)), 24.0)
    hod[hod < 0] += 24.0
    out = np.zeros((len(hod), len(bounds)))
    for j, (_, a, b) in enumerate(bounds):
        out[:, j] = ((hod >= a) & (hod < b)) if a < b else ((hod >= a) | (hod < b))
    return out


def holiday_basis(t, holidays: Sequence[str]) -> np.ndarray:
    days = np.floor(np.atleast_1d(np.asarray(t, dtype=float)) / 24.0)
    out = np.zeros((len(days), len(holidays)))
    for j, d in enumerate(holidays):
        day = (pd.Timestamp(d, tz="UTC").normalize() - EPOCH) // pd.Timedelta(days=1)
        out[:, j] = days == day
    return out


@dataclass(frozen=True)
class StadConfig:
    seasonal_blocks: Tuple[Tuple[str, float, int], ...] = DEFAULT_BLOCKS
    daypart_bounds: Tuple[Tuple[str, int, int], ...] = DEFAULT_DAYPARTS
    n_changepoints: int = 25
    changepoint_range: float = 0.8
    trend_reg: float = 10.0
    seasonal_reg: float = 1.0
    daypart_reg: float = 1.0
    holiday_reg: float = 1.0
    regressor_reg: float = 1.0
    regressor_names: Tuple[str, ...] = ()
    holidays: Tuple[str, ...] = ()
    subtract_trend: bool = False

    def __post_init__(self):
        for name, period, order in self.seasonal_blocks:
            if period <= 0 or order < 1:
                raise ValueError(f"seasonal block {name!r}: period must be > 0 and order >= 1")
        if self.daypart_bounds:
            cover = np.zeros(24, dtype=int)
            for _, a, b in self.daypart_bounds:
                hours = range(a, b) if a < b else list(range(a, 24)) + list(range(0, b))
                for h in hours:
                    cover[h] += 1
            if not np.all(cover == 1):
                raise ValueError("daypart ranges must partition the 24 hours")
        if self.n_changepoints < 0 or not 0 < self.changepoint_range <= 1:
            raise ValueError("invalid changepoint settings")
        for lam in (self.trend_reg, self.seasonal_reg, self.daypart_reg, self.holiday_reg,
                    self.regressor_reg):
            if lam < 0:
                raise ValueError("penalties must be non-negative")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, d: dict) -> "StadConfig":
        d = dict(d)
        for key in ("seasonal_blocks", "daypart_bounds"):
            if key in d:
                d[key] = tuple(tuple(x) for x in d[key])
        for key in ("regressor_names", "holidays"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class StadModel:
    config: StadConfig
    t0: float
    t_scale: float
    changepoints: np.ndarray
    weights: np.ndarray
    reg_mean: np.ndarray
    reg_scale: np.ndarray
    fit_span: Tuple[pd.Timestamp, pd.Timestamp]

    # -- weight layout --

    def _sizes(self) -> Dict[str, int]:
        cfg = self.config
        return {
            "trend": len(self.changepoints) + 2,
            "seasonal": 2 * sum(o for _, _, o in cfg.seasonal_blocks),
            "daypart": len(cfg.daypart_bounds),
            "holiday": len(cfg.holidays),
            "regressor": len(cfg.regressor_names),
        }

    def _slices(self) -> Dict[str, slice]:
        out, pos = {}, 0
        for name, size in self._sizes().items():
            out[name] = slice(pos, pos + size)
            pos += size
        return out

    def block(self, name: str) -> np.ndarray:
        return self.weights[self._slices()[name]]

    @property
    def seasonal_weights(self) -> Dict[str, np.ndarray]:
        w = self.block("seasonal")
        out, pos = {}, 0
        for name, _, order in self.config.seasonal_blocks:
            out[name] = w[pos: pos + 2 * order]
            pos += 2 * order
        return out

    def trend_line(self) -> Tuple[float, float]:
        """Base ``(intercept, slope)`` of the trend in hours since epoch, before any changepoint."""
        a, b = self.block("trend")[:2]
        slope = b / self.t_scale
        return float(a - slope * self.t0), float(slope)

    # -- design --

    def _scaled_time(self, t: np.ndarray) -> np.ndarray:
        return (t - self.t0) / self.t_scale

    def design(self, t: np.ndarray, regressors: Optional[np.ndarray]) -> Dict[str, np.ndarray]:
        cfg = self.config
        blocks = {
            "trend": trend_basis(self._scaled_time(t), self._scaled_time(self.changepoints)),
            "seasonal": np.hstack(
                [fourier_basis(t, p, o) for _, p, o in cfg.seasonal_blocks]
                or [np.empty((len(t), 0))]
            ),
            "daypart": daypart_basis(t, cfg.daypart_bounds),
            "holiday": holiday_basis(t, cfg.holidays),
        }
        if cfg.regressor_names:
            if regressors is None:
                raise MissingRegressors(f"model needs regressors {list(cfg.regressor_names)[:3]}...")
            R = np.asarray(regressors, dtype=float)
            if R.shape != (len(t), len(cfg.regressor_names)):
                raise MisalignedRegressors(
                    f"regressors shape {R.shape} != ({len(t)}, {len(cfg.regressor_names)})"
                )
            blocks["regressor"] = (R - self.reg_mean) / self.reg_scale
        else:
            blocks["regressor"] = np.empty((len(t), 0))
        return blocks

    def penalties(self) -> np.ndarray:
        cfg = self.config
        sizes = self._sizes()
        return np.concatenate([
            [0.0, 0.0],
            np.full(sizes["trend"] - 2, cfg.trend_reg),
            np.full(sizes["seasonal"], cfg.seasonal_reg),
            np.full(sizes["daypart"], cfg.daypart_reg),
            np.full(sizes["holiday"], cfg.holiday_reg),
            np.full(sizes["regressor"], cfg.regressor_reg),
        ])

    # -- persistence --

    def to_json(self) -> str:
        return json.dumps({
            "version": 1,
            "config": self.config.to_dict(),
            "t0": self.t0,
            "t_scale": self.t_scale,
            "changepoints": self.changepoints.tolist(),
            "weights": {k: self.block(k).tolist() for k in self._sizes()},
            "reg_mean": self.reg_mean.tolist(),
            "reg_scale": self.reg_scale.tolist(),
            "fit_span": [self.fit_span[0].isoformat(), self.fit_span[1].isoformat()],
        }, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "StadModel":
        d = json.loads(text)
        cfg = StadConfig.from_dict(d["config"])
        w = d["weights"]
        weights = np.concatenate(
            [np.asarray(w[k], dtype=float) for k in ("trend", "seasonal", "daypart", "holiday", "regressor")]
        )
        return cls(
            cfg, float(d["t0"]), float(d["t_scale"]), np.asarray(d["changepoints"], dtype=float),
            weights, np.asarray(d["reg_mean"], dtype=float), np.asarray(d["reg_scale"], dtype=float),
            (pd.Timestamp(d["fit_span"][0]), pd.Timestamp(d["fit_span"][1])),
        )


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Component series with ``trend + seasonal + holiday + regressor + residual == y``."""

    trend: TimeSeries
    seasonal: TimeSeries
    holiday: TimeSeries
    regressor: TimeSeries
    residual: TimeSeries
    fitted: TimeSeries

    def to_csv(self, path) -> None:
        frame = pd.DataFrame({
            "timestamp": self.trend.timestamps.strftime("%Y-%m-%dT%H:00:00Z"),
            "trend": self.trend.values,
            "seasonal": self.seasonal.values,
            "holiday": self.holiday.values,
            "regressor": self.regressor.values,
            "residual": self.residual.values,
            "fitted": self.fitted.values,
        })
        frame.to_csv(path, index=False, float_format="%.17g")


def stad_fit(y: TimeSeries, regressors: Optional[np.ndarray] = None,
             cfg: StadConfig = StadConfig()) -> StadModel:
    """Fit the decomposer; hours where ``y`` or a regressor is missing are skipped."""
    t = y.hours_since_epoch()
    n = len(t)
    if n < 2:
        raise ValueError("need at least two hours to fit")
    if cfg.regressor_names:
        if regressors is None:
            raise MisalignedRegressors("config names regressors but none were given")
        R = np.asarray(regressors, dtype=float)
        if R.shape != (n, len(cfg.regressor_names)):
            raise MisalignedRegressors(
                f"regressors shape {R.shape} != ({n}, {len(cfg.regressor_names)})"
            )
    elif regressors is not None and np.size(regressors):
        raise MisalignedRegressors("regressors given but config names none")
    else:
        R = np.empty((n, 0))

    rows = ~np.isnan(y.values) & ~np.isnan(R).any(axis=1)
    if rows.sum() < 2:
        raise ValueError("fewer than two usable hours")
    t0, t1 = t[rows][0], t[rows][-1]
    scale = max(t1 - t0, 1.0)
    cps = t0 + np.linspace(0.0, cfg.changepoint_range * (t1 - t0), cfg.n_changepoints + 1)[1:]
    mu = R[rows].mean(axis=0)
    sd = R[rows].std(axis=0)
    sd[sd == 0] = 1.0

    shell = StadModel(cfg, float(t0), float(scale), cps, np.empty(0), mu, sd,
                      (y.start, y.end))
    A = np.hstack(list(shell.design(t[rows], R[rows] if cfg.regressor_names else None).values()))
    M = A.T @ A
    M[np.diag_indices_from(M)] += shell.penalties()
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 1e-13 * max(np.trace(A.T @ A), 1.0):
        raise SingularSystem("decomposer design is singular; add a penalty")
    w = linalg.solve(M, A.T @ y.values[rows], assume_a="pos")
    return StadModel(cfg, float(t0), float(scale), cps, w, mu, sd, (y.start, y.end))


def _combine(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    # column-by-column accumulation applies the same operations to every row,
    # so identical basis rows give bit-identical contributions
    out = np.zeros(X.shape[0])
    for j in range(X.shape[1]):
        out += X[:, j] * w[j]
    return out


def _series(start, values, name) -> TimeSeries:
    return TimeSeries(start, values, name=name)


def stad_components(m: StadModel, hours, regressors: Optional[np.ndarray] = None,
                    observed: Optional[TimeSeries] = None) -> Decomposition:
    """Evaluate each component over ``hours``.

    ``hours`` is a :class:`TimeSeries` (its values double as observations), a
    ``DatetimeIndex`` or contiguous hours since epoch. Outside the fit span
    the trend continues with its final slope and seasonality repeats.
    """
    if isinstance(hours, TimeSeries) and observed is None:
        observed = hours
    t = _hours(hours)
    if len(t) > 1 and np.any(np.diff(t) != 1):
        raise ValueError("hours must be contiguous")
    start = EPOCH + int(t[0]) * HOUR
    X = m.design(t, regressors)
    sl = m._slices()
    trend = _combine(X["trend"], m.weights[sl["trend"]])
    seasonal = _combine(np.hstack([X["seasonal"], X["daypart"]]),
                        np.concatenate([m.weights[sl["seasonal"]], m.weights[sl["daypart"]]]))
    holiday = _combine(X["holiday"], m.weights[sl["holiday"]])
    reg = _combine(X["regressor"], m.weights[sl["regressor"]])
    fitted = trend + seasonal + holiday + reg
    y = observed.values if observed is not None else np.full(len(t), np.nan)
    return Decomposition(
        trend=_series(start, trend, "trend"),
        seasonal=_series(start, seasonal, "seasonal"),
        holiday=_series(start, holiday, "holiday"),
        regressor=_series(start, reg, "regressor"),
        residual=_series(start, y - fitted, "residual"),
        fitted=_series(start, fitted, "fitted"),
    )


def removable(m: StadModel, hours, regressors: Optional[np.ndarray] = None) -> np.ndarray:
    """The calendar part the hybrid strips off and adds back: ``s + h``, plus ``g`` if configured.

    Regressor effects stay in the residual stream; only terms that are pure
    functions of the timestamp are extrapolated.
    """
    d = stad_components(m, hours, regressors)
    out = d.seasonal.values + d.holiday.values
    if m.config.subtract_trend:
        out = out + d.trend.values
    return out


def deseasonalize(y: TimeSeries, m: StadModel, regressors: Optional[np.ndarray] = None) -> TimeSeries:
    return y.with_values(y.values - removable(m, y, regressors), name=f"{y.name}_deseasoned")
