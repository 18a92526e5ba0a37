"""Design-matrix construction and ridge-based recursive feature elimination.

Every feature is defined by an offset relative to the target hour ``t``.
Energy may only be read at ``t - 48`` or earlier and weather forecasts at
``t + 24`` or earlier; :class:`FeatureSpec` rejects recipes that break this
and :class:`GuardedAccess` enforces it again at read time.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from rescast.core import EPOCH, HOUR, TimeSeries, to_utc_hour
from rescast.errors import (
    AvailabilityViolation,
    EmptyMatrix,
    GapInWindow,
    InsufficientCoverage,
    InsufficientHistory,
    InvalidK,
    SingularSystem,
)
from rescast.ingestion import AlignedDataset, EnergyType, WeatherFrame

ENERGY_DELAY = 48
WEATHER_LEAD = 24

CYCLICAL_FIELDS = ("hour", "day_of_week", "day_of_month", "day_of_year", "month")
ROLLING_STATS = ("min", "max", "mean", "skew", "var", "std")
WEATHER_VARS = {
    EnergyType.SOLAR: ("temperature", "humidity", "visibility", "wind_speed"),
    EnergyType.WIND: ("gust", "wind_speed"),
}

# offsets every weather variable gets before padding towards the nominal width
BASE_WEATHER_OFFSETS = (-24, -12, -6, -3, -1, 1, 3, 6, 12, 24)
NOMINAL_WIDTH = 176


def offset_name(var: str, offset: int) -> str:
    return f"{var}_{'m' if offset < 0 else 'p'}{abs(offset)}"


@dataclass(frozen=True)
class FeatureSpec:
    """Recipe for one row of features at target hour ``t``.

    ``lag_range`` is an inclusive range of hours into the past. The rolling
    window covers ``[t - lag_range[0] - rolling_window, t - lag_range[0]]``.
    ``weather_offsets`` pairs each variable with the hour offsets it is read at.
    """

    lag_range: Optional[Tuple[int, int]] = (48, 96)
    rolling_window: Optional[int] = 48
    cyclical_fields: Tuple[str, ...] = CYCLICAL_FIELDS
    weather_offsets: Tuple[Tuple[str, Tuple[int, ...]], ...] = ()

    def __post_init__(self):
        if self.lag_range is not None:
            lo, hi = self.lag_range
            if lo < ENERGY_DELAY or hi < lo:
                raise ValueError(f"lag range {self.lag_range} violates the 48 h availability limit")
        if self.rolling_window is not None and self.rolling_window < 1:
            raise ValueError("rolling_window must be positive")
        for f in self.cyclical_fields:
            if f not in CYCLICAL_FIELDS:
                raise ValueError(f"unknown cyclical field {f!r}")
        names = [v for v, _ in self.weather_offsets]
        if len(set(names)) != len(names):
            raise ValueError("weather variables must be unique")
        for v, offs in self.weather_offsets:
            if offs and max(offs) > WEATHER_LEAD:
                raise ValueError(f"{v}: weather offsets beyond +{WEATHER_LEAD} h are not available")

    @property
    def anchor(self) -> int:
        return self.lag_range[0] if self.lag_range else ENERGY_DELAY

    @property
    def lags(self) -> List[int]:
        if self.lag_range is None:
            return []
        return list(range(self.lag_range[0], self.lag_range[1] + 1))

    @property
    def weather_vars(self) -> List[str]:
        return [v for v, _ in self.weather_offsets]

    def rolling_lags(self) -> List[int]:
        if self.rolling_window is None:
            return []
        return list(range(self.anchor, self.anchor + self.rolling_window + 1))

    def columns(self) -> List[str]:
        cols = []
        for f in self.cyclical_fields:
            cols += [f"{f}_sin", f"{f}_cos"]
        cols += [f"lag_{k}" for k in self.lags]
        if self.rolling_window is not None:
            cols += [f"roll_{s}" for s in ROLLING_STATS]
        for v, offs in self.weather_offsets:
            cols += [offset_name(v, o) for o in offs]
        return cols

    @property
    def width(self) -> int:
        return len(self.columns())

    def max_history(self) -> int:
        """Hours of energy history a row needs before the target."""
        return max(self.lags + self.rolling_lags() + [0])

    def energy_offsets(self) -> List[int]:
        """Every relative hour at which energy is read (negative = past)."""
        return sorted({-k for k in self.lags + self.rolling_lags()})

    def to_dict(self) -> dict:
        return {
            "lag_range": list(self.lag_range) if self.lag_range else None,
            "rolling_window": self.rolling_window,
            "cyclical_fields": list(self.cyclical_fields),
            "weather_offsets": [[v, list(o)] for v, o in self.weather_offsets],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatureSpec":
        return cls(
            lag_range=tuple(d["lag_range"]) if d.get("lag_range") else None,
            rolling_window=d.get("rolling_window"),
            cyclical_fields=tuple(d.get("cyclical_fields", ())),
            weather_offsets=tuple((v, tuple(o)) for v, o in d.get("weather_offsets", ())),
        )


def _nearest_offsets(limit: int = WEATHER_LEAD) -> List[int]:
    out = [0]
    for k in range(1, limit + 1):
        out += [-k, k]
    return out


def full_spec(energy_type, window: int = WEATHER_LEAD) -> FeatureSpec:
    """Every weather offset in ``[-window, +window]`` for the energy type's variables."""
    offs = tuple(range(-window, window + 1))
    return FeatureSpec(weather_offsets=tuple((v, offs) for v in WEATHER_VARS[EnergyType(energy_type)]))


def canonical_spec(energy_type, width: int = NOMINAL_WIDTH) -> FeatureSpec:
    """The repository's default matrix recipe.

    Each weather variable gets :data:`BASE_WEATHER_OFFSETS`; further offsets
    are added nearest-first, round-robin over variables, until the matrix is
    ``width`` wide or every offset in the ±24 h window is used.
    """
    variables = WEATHER_VARS[EnergyType(energy_type)]
    base = FeatureSpec()
    budget = width - base.width
    chosen: Dict[str, List[int]] = {v: list(BASE_WEATHER_OFFSETS) for v in variables}
    used = len(variables) * len(BASE_WEATHER_OFFSETS)
    pending = {v: [o for o in _nearest_offsets() if o not in chosen[v]] for v in variables}
    while used < budget and any(pending.values()):
        for v in variables:
            if used >= budget or not pending[v]:
                continue
            chosen[v].append(pending[v].pop(0))
            used += 1
    return FeatureSpec(weather_offsets=tuple((v, tuple(sorted(chosen[v]))) for v in variables))


def regressor_spec(energy_type) -> FeatureSpec:
    """External regressors for the decomposer.

    Rolling statistics, energy lags 48 to 72 h, weather values 48 to 72 h in
    the past and weather forecasts for the next 24 h.
    """
    past = tuple(range(-72, -47))
    ahead = tuple(range(1, WEATHER_LEAD + 1))
    return FeatureSpec(
        lag_range=(48, 72),
        rolling_window=48,
        cyclical_fields=(),
        weather_offsets=tuple((v, past + ahead) for v in WEATHER_VARS[EnergyType(energy_type)]),
    )


def raw_spec() -> FeatureSpec:
    """Energy lags only: the model variants without feature engineering."""
    return FeatureSpec(rolling_window=None, cyclical_fields=())


# -- matrix container -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    X: np.ndarray
    columns: List[str]
    target: np.ndarray
    timestamps: pd.DatetimeIndex

    def __post_init__(self):
        if len(set(self.columns)) != len(self.columns):
            raise ValueError("column names must be unique")
        if self.X.shape != (len(self.target), len(self.columns)):
            raise ValueError("matrix shape does not match target/columns")

    def __len__(self) -> int:
        return len(self.target)

    @property
    def width(self) -> int:
        return len(self.columns)

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        pos = {c: i for i, c in enumerate(self.columns)}
        idx = [pos[n] for n in names]
        return FeatureMatrix(self.X[:, idx], list(names), self.target, self.timestamps)

    def with_target(self, target) -> "FeatureMatrix":
        return FeatureMatrix(self.X, self.columns, np.asarray(target, dtype=float), self.timestamps)

    def rows(self, mask) -> "FeatureMatrix":
        return FeatureMatrix(self.X[mask], self.columns, self.target[mask], self.timestamps[mask])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "target"] + self.columns)
            stamps = self.timestamps.strftime("%Y-%m-%dT%H:00:00Z")
            for ts, y, row in zip(stamps, self.target, self.X):
                w.writerow([ts, repr(float(y))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        df = pd.read_csv(path, float_precision="round_trip")
        stamps = pd.DatetimeIndex(pd.to_datetime(df.pop("timestamp"), utc=True))
        target = df.pop("target").to_numpy(dtype=float)
        return cls(df.to_numpy(dtype=float), list(df.columns), target, stamps)


# -- calendar encodings ----------------------------------------------------------


def cyclical_block(stamps: pd.DatetimeIndex, fields: Sequence[str] = CYCLICAL_FIELDS) -> np.ndarray:
    """Polar encoding ``(sin, cos)`` of each calendar field, two columns per field."""
    stamps = pd.DatetimeIndex(stamps)
    leap = np.asarray(stamps.is_leap_year)
    position = {
        "hour": (stamps.hour, 24),
        "day_of_week": (stamps.dayofweek, 7),
        "day_of_month": (stamps.day - 1, np.asarray(stamps.days_in_month)),
        "day_of_year": (stamps.dayofyear - 1, np.where(leap, 366, 365)),
        "month": (stamps.month - 1, 12),
    }
    out = np.empty((len(stamps), 2 * len(fields)))
    for j, f in enumerate(fields):
        p, period = position[f]
        angle = 2 * np.pi * np.asarray(p, dtype=float) / period
        out[:, 2 * j] = np.sin(angle)
        out[:, 2 * j + 1] = np.cos(angle)
    return out


def encode_cyclical(t) -> Dict[str, Tuple[float, float]]:
    t = to_utc_hour(t)
    row = cyclical_block(pd.DatetimeIndex([t]))[0]
    return {f: (float(row[2 * j]), float(row[2 * j + 1])) for j, f in enumerate(CYCLICAL_FIELDS)}


# -- rolling statistics ------------------------------------------------------------


def window_stats(windows: np.ndarray) -> np.ndarray:
    """Row-wise ``min, max, mean, skew, var, std`` of a 2-D array of windows.

    Variance and skewness use the population form; a constant window has zero
    variance and zero skewness.
    """
    w = np.atleast_2d(np.asarray(windows, dtype=float))
    lo, hi = w.min(axis=1), w.max(axis=1)
    mean = w.mean(axis=1)
    dev = w - mean[:, None]
    var = (dev ** 2).mean(axis=1)
    m3 = (dev ** 3).mean(axis=1)
    flat = lo == hi
    var[flat] = 0.0
    mean[flat] = lo[flat]
    with np.errstate(invalid="ignore", divide="ignore"):
        skew = np.where(flat | (var == 0), 0.0, m3 / np.where(var > 0, var, 1.0) ** 1.5)
    return np.column_stack([lo, hi, mean, skew, var, np.sqrt(var)])


# -- data access -----------------------------------------------------------------


@dataclass
class AccessLog:
    """Latest energy and weather hour read for each target hour."""

    records: List[Tuple[pd.Timestamp, Optional[pd.Timestamp], Optional[pd.Timestamp]]] = field(
        default_factory=list
    )

    def violations(self) -> list:
        bad = []
        for t, e, w in self.records:
            if e is not None and e > t - ENERGY_DELAY * HOUR:
                bad.append((t, "energy", e))
            if w is not None and w > t + WEATHER_LEAD * HOUR:
                bad.append((t, "weather", w))
        return bad


class GuardedAccess:
    """Reads features for a batch of target rows of one scaled dataset.

    Offsets are relative to each target row. Requests beyond the availability
    limits raise :class:`AvailabilityViolation`; out-of-span reads yield NaN.
    When ``log`` is given, the latest absolute hour actually read is recorded
    per target row.
    """

    def __init__(self, energy: np.ndarray, weather: Mapping[str, np.ndarray], start: pd.Timestamp,
                 rows: np.ndarray, log: Optional[AccessLog] = None):
        self.energy = energy
        self.weather = weather
        self.start = start
        self.rows = np.asarray(rows, dtype=np.int64)
        self.log = log
        self._max_e = np.full(len(self.rows), -1, dtype=np.int64)
        self._max_w = np.full(len(self.rows), -1, dtype=np.int64)

    @property
    def n(self) -> int:
        return len(self.rows)

    def _gather(self, arr: np.ndarray, offsets: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.rows[:, None] + np.asarray(offsets, dtype=np.int64)[None, :]
        inside = (idx >= 0) & (idx < len(arr))
        out = np.full(idx.shape, np.nan)
        out[inside] = arr[idx[inside]]
        read = np.where(inside, idx, -1).max(axis=1) if idx.shape[1] else np.full(self.n, -1)
        return out, read

    def energy_at(self, offsets: Sequence[int]) -> np.ndarray:
        if offsets and max(offsets) > -ENERGY_DELAY:
            raise AvailabilityViolation(f"energy offset {max(offsets)} h is later than t-48 h")
        out, read = self._gather(self.energy, offsets)
        self._max_e = np.maximum(self._max_e, read)
        return out

    def weather_at(self, var: str, offsets: Sequence[int]) -> np.ndarray:
        if offsets and max(offsets) > WEATHER_LEAD:
            raise AvailabilityViolation(f"weather offset {max(offsets)} h is later than t+24 h")
        out, read = self._gather(self.weather[var], offsets)
        self._max_w = np.maximum(self._max_w, read)
        return out

    def stamps(self) -> pd.DatetimeIndex:
        return pd.DatetimeIndex(self.start + self.rows * HOUR)

    def hours(self) -> np.ndarray:
        return self.rows.astype(float) + (self.start - EPOCH) // HOUR

    def flush(self) -> None:
        """Append this batch's per-row read extents to the log."""
        if self.log is None:
            return
        targets = self.stamps()
        for t, e, w in zip(targets, self._max_e, self._max_w):
            self.log.records.append(
                (
                    t,
                    self.start + int(e) * HOUR if e >= 0 else None,
                    self.start + int(w) * HOUR if w >= 0 else None,
                )
            )


def feature_block(acc: GuardedAccess, spec: FeatureSpec) -> np.ndarray:
    """Features for every row of ``acc``; rows touching a gap contain NaN."""
    parts = []
    if spec.cyclical_fields:
        parts.append(cyclical_block(acc.stamps(), spec.cyclical_fields))
    if spec.lags:
        parts.append(acc.energy_at([-k for k in spec.lags]))
    if spec.rolling_window is not None:
        win = acc.energy_at([-k for k in spec.rolling_lags()])
        stats = np.full((acc.n, len(ROLLING_STATS)), np.nan)
        ok = ~np.isnan(win).any(axis=1)
        if ok.any():
            stats[ok] = window_stats(win[ok])
        parts.append(stats)
    for v, offs in spec.weather_offsets:
        parts.append(acc.weather_at(v, list(offs)))
    return np.hstack(parts) if parts else np.empty((acc.n, 0))


# -- single-row operations -----------------------------------------------------------


def lag_features(energy: TimeSeries, t: int, spec: FeatureSpec) -> Dict[str, float]:
    """Lagged energy values for target index ``t``; a gap leaves NaN (row invalid)."""
    if not spec.lags or t - spec.lags[-1] < 0:
        raise InsufficientHistory(f"index {t} lacks {spec.lags[-1] if spec.lags else 0} h of history")
    acc = GuardedAccess(energy.values, {}, energy.start, np.array([t]))
    vals = acc.energy_at([-k for k in spec.lags])[0]
    return {f"lag_{k}": float(v) for k, v in zip(spec.lags, vals)}


def rolling_stats(energy: TimeSeries, t: int, spec: FeatureSpec) -> Dict[str, float]:
    lags = spec.rolling_lags()
    if t - lags[-1] < 0:
        raise InsufficientHistory(f"index {t} lacks {lags[-1]} h of history")
    win = energy.values[t - lags[-1]: t - lags[0] + 1]
    if np.isnan(win).any():
        raise GapInWindow(f"gap inside rolling window for index {t}")
    return dict(zip(ROLLING_STATS, map(float, window_stats(win)[0])))


def weather_window(weather: WeatherFrame, t: int, spec: FeatureSpec) -> Dict[str, float]:
    out = {}
    for v, offs in spec.weather_offsets:
        if t + min(offs) < 0 or t + max(offs) >= len(weather):
            raise InsufficientCoverage(f"weather window of {v} leaves the frame at index {t}")
        acc = GuardedAccess(np.empty(0), weather.variables, weather.start, np.array([t]))
        for o, val in zip(offs, acc.weather_at(v, list(offs))[0]):
            out[offset_name(v, o)] = float(val)
    return out


# -- matrix assembly -------------------------------------------------------------------


def build_matrix(data: AlignedDataset, spec: FeatureSpec, rows: Optional[np.ndarray] = None,
                 log: Optional[AccessLog] = None) -> FeatureMatrix:
    """Assemble the design matrix; rows with any gap-derived value are dropped.

    ``data`` is expected to be scaled already. ``rows`` restricts the target
    hours considered (default: all).
    """
    if rows is None:
        rows = np.arange(len(data))
    acc = GuardedAccess(data.energy.values, data.weather.variables, data.start, rows, log)
    X = feature_block(acc, spec)
    acc.flush()
    y = data.energy.values[acc.rows]
    ok = ~np.isnan(X).any(axis=1) & ~np.isnan(y)
    if not ok.any():
        raise EmptyMatrix("no valid feature rows")
    return FeatureMatrix(X[ok], spec.columns(), y[ok], acc.stamps()[ok])


# -- ridge regression --------------------------------------------------------------------


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    lam: float
    std_weights: np.ndarray

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.intercept


def _as_array(X) -> np.ndarray:
    return X.X if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)


def ridge_fit(X, y, lam: float = 1.0) -> RidgeModel:
    """Ridge regression on internally standardized columns, intercept unpenalized.

    Constant columns get weight zero.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    A = _as_array(X)
    y = np.asarray(y, dtype=float)
    if A.ndim != 2 or len(A) < 1 or len(A) != len(y):
        raise ValueError("X must be 2-D with one row per target")
    mu = A.mean(axis=0)
    sd = A.std(axis=0)
    live = sd > 0
    Z = (A[:, live] - mu[live]) / sd[live]
    yc = y - y.mean()
    G = Z.T @ Z
    if lam == 0 and live.any() and np.linalg.matrix_rank(Z) < live.sum():
        raise SingularSystem("XᵀX is singular and lambda is 0")
    w_std = np.zeros(A.shape[1])
    if live.any():
        G[np.diag_indices_from(G)] += lam
        try:
            w_std[live] = linalg.solve(G, Z.T @ yc, assume_a="pos")
        except linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
    w = np.zeros_like(w_std)
    w[live] = w_std[live] / sd[live]
    return RidgeModel(w, float(y.mean() - mu @ w), float(lam), w_std)


# -- recursive feature elimination ---------------------------------------------------------


@dataclass(frozen=True)
class SelectionResult:
    kept_columns: List[str]
    elimination_trace: List[dict]

    def to_json(self) -> str:
        return json.dumps({"kept": self.kept_columns, "trace": self.elimination_trace}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SelectionResult":
        d = json.loads(text)
        return cls(list(d["kept"]), list(d["trace"]))


def rfe(X: FeatureMatrix, y=None, k: int = 150, step: int = 2, lam: float = 1.0,
        val_fraction: float = 0.2) -> SelectionResult:
    """Recursive feature elimination driven by ridge weight magnitudes.

    Each round fits ridge on the chronologically first part of the rows,
    records the MSE on the last ``val_fraction`` and drops the ``step``
    columns with the smallest standardized weight.
    """
    y = X.target if y is None else np.asarray(y, dtype=float)
    if not 1 <= k <= X.width:
        raise InvalidK(f"k={k} outside [1, {X.width}]")
    if step < 1:
        raise ValueError("step must be >= 1")
    n_fit = len(X) - max(1, int(round(len(X) * val_fraction)))
    if n_fit < 1:
        raise ValueError("too few rows for a validation holdout")
    keep = list(range(X.width))
    trace = []
    while len(keep) > k:
        A = X.X[:, keep]
        model = ridge_fit(A[:n_fit], y[:n_fit], lam)
        mse = float(np.mean((model.predict(A[n_fit:]) - y[n_fit:]) ** 2))
        n_drop = min(step, len(keep) - k)
        order = np.argsort(np.abs(model.std_weights), kind="stable")[:n_drop]
        dropped = [keep[i] for i in sorted(order)]
        trace.append({"dropped": [X.columns[i] for i in dropped], "val_mse": mse})
        keep = [c for c in keep if c not in dropped]
    return SelectionResult([X.columns[i] for i in keep], trace)
