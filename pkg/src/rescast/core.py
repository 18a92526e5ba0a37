"""Hourly time-series container, min-max scaling and chronological splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd

from rescast.errors import ConstantSeries, EmptySeries, EmptyTrain, OutOfRange

HOUR = pd.Timedelta(hours=1)
EPOCH = pd.Timestamp("1970-01-01", tz="UTC")


def to_utc_hour(ts) -> pd.Timestamp:
    """Coerce ``ts`` to a tz-aware UTC timestamp lying exactly on the hour."""
    t = pd.Timestamp(ts)
    t = t.tz_localize("UTC") if t.tzinfo is None else t.tz_convert("UTC")
    if t != t.floor("h"):
        raise ValueError(f"timestamp {t.isoformat()} is not on the hour")
    return t


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError("series values must be one-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Hourly UTC series; position ``i`` is ``start + i`` hours, NaN marks a gap."""

    start: pd.Timestamp
    values: np.ndarray
    name: str = ""
    unit: str = ""

    def __post_init__(self):
        object.__setattr__(self, "start", to_utc_hour(self.start))
        object.__setattr__(self, "values", _frozen(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.start == other.start
            and self.name == other.name
            and self.unit == other.unit
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    @property
    def end(self) -> pd.Timestamp:
        """Exclusive end of the span."""
        return self.start + len(self) * HOUR

    @property
    def timestamps(self) -> pd.DatetimeIndex:
        return pd.date_range(self.start, periods=len(self), freq="h")

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def hours_since_epoch(self) -> np.ndarray:
        offset = (self.start - EPOCH) // HOUR
        return np.arange(len(self), dtype=float) + offset

    def index_of(self, ts) -> int:
        """Position of ``ts`` relative to ``start`` (may fall outside the span)."""
        return int((to_utc_hour(ts) - self.start) // HOUR)

    def with_values(self, values, **changes) -> "TimeSeries":
        return TimeSeries(
            start=changes.get("start", self.start),
            values=values,
            name=changes.get("name", self.name),
            unit=changes.get("unit", self.unit),
        )

    def slice_time(self, begin, end) -> "TimeSeries":
        """Sub-series over ``[begin, end)``; both bounds must lie inside the span."""
        i, j = self.index_of(begin), self.index_of(end)
        if i < 0 or j > len(self) or i > j:
            raise OutOfRange(f"[{begin}, {end}) is outside the series span")
        return self.with_values(self.values[i:j], start=self.start + i * HOUR)

    def to_pandas(self) -> pd.Series:
        return pd.Series(self.values, index=self.timestamps, name=self.name)

    @classmethod
    def from_pandas(cls, s: pd.Series, name=None, unit="") -> "TimeSeries":
        """Build from a series with an hourly DatetimeIndex; missing hours become gaps."""
        if len(s) == 0:
            raise EmptySeries("cannot build a TimeSeries from an empty series")
        idx = pd.DatetimeIndex(s.index)
        idx = idx.tz_localize("UTC") if idx.tz is None else idx.tz_convert("UTC")
        s = pd.Series(np.asarray(s, dtype=float), index=idx).sort_index()
        full = pd.date_range(idx.min(), idx.max(), freq="h")
        return cls(full[0], s.reindex(full).to_numpy(), name=name or (s.name or ""), unit=unit)


@dataclass(frozen=True)
class ScalerParams:
    min: float
    max: float

    def __post_init__(self):
        if not self.max > self.min:
            raise ConstantSeries(f"degenerate scaler range [{self.min}, {self.max}]")

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.min) / (self.max - self.min)

    def inverse(self, values):
        return np.asarray(values, dtype=float) * (self.max - self.min) + self.min

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max}


@dataclass(frozen=True)
class SplitSpec:
    train_end: pd.Timestamp
    test_end: pd.Timestamp

    def __post_init__(self):
        object.__setattr__(self, "train_end", to_utc_hour(self.train_end))
        object.__setattr__(self, "test_end", to_utc_hour(self.test_end))
        if not self.train_end < self.test_end:
            raise ValueError("train_end must precede test_end")


def minmax_fit(series: TimeSeries) -> ScalerParams:
    vals = series.values[series.present]
    if vals.size == 0:
        raise EmptySeries(f"series {series.name!r} has no present values")
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        raise ConstantSeries(f"series {series.name!r} is constant ({lo})")
    return ScalerParams(lo, hi)


def minmax_transform(series: TimeSeries, p: ScalerParams) -> TimeSeries:
    # values beyond the fitted range map outside [0, 1] on purpose
    return series.with_values(p.transform(series.values), unit="scaled")


def minmax_inverse(series: TimeSeries, p: ScalerParams, unit: str = "") -> TimeSeries:
    return series.with_values(p.inverse(series.values), unit=unit)


def split(series: TimeSeries, spec: SplitSpec) -> Tuple[TimeSeries, TimeSeries]:
    """Chronological train/test split; rows at or after ``test_end`` are dropped."""
    if spec.train_end == series.start:
        raise EmptyTrain("train_end coincides with the series start")
    if spec.train_end < series.start or spec.test_end > series.end:
        raise OutOfRange(
            f"split [{spec.train_end}, {spec.test_end}) exceeds span "
            f"[{series.start}, {series.end})"
        )
    return (
        series.slice_time(series.start, spec.train_end),
        series.slice_time(spec.train_end, spec.test_end),
    )
