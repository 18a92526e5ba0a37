"""CSV ingestion and alignment of generation and weather data.

Generation files carry ``timestamp,solar_mw,wind_mw``; weather files carry
``timestamp`` plus one column per variable. Timestamps are ISO-8601 UTC on the
hour, an empty cell is a missing value.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Tuple

import numpy as np
import pandas as pd

from rescast.core import HOUR, TimeSeries, to_utc_hour
from rescast.errors import ExcessiveGaps, NoOverlap, NonHourly, OutOfRange, ParseError

log = logging.getLogger(__name__)


class EnergyType(str, Enum):
    SOLAR = "solar"
    WIND = "wind"

    @property
    def column(self) -> str:
        return f"{self.value}_mw"


@dataclass(frozen=True, eq=False)
class WeatherFrame:
    start: pd.Timestamp
    variables: Dict[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "start", to_utc_hour(self.start))
        frozen = {}
        lengths = set()
        for name, vals in self.variables.items():
            arr = np.array(vals, dtype=float)
            arr.setflags(write=False)
            frozen[name] = arr
            lengths.add(len(arr))
        if len(lengths) > 1:
            raise ValueError("weather variables must share one length")
        object.__setattr__(self, "variables", frozen)

    def __len__(self) -> int:
        return len(next(iter(self.variables.values()))) if self.variables else 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, WeatherFrame):
            return NotImplemented
        return (
            self.start == other.start
            and list(self.variables) == list(other.variables)
            and all(
                np.array_equal(self.variables[k], other.variables[k], equal_nan=True)
                for k in self.variables
            )
        )

    @property
    def end(self) -> pd.Timestamp:
        return self.start + len(self) * HOUR

    @property
    def names(self) -> List[str]:
        return list(self.variables)

    def series(self, name: str) -> TimeSeries:
        return TimeSeries(self.start, self.variables[name], name=name)

    def slice_time(self, begin, end) -> "WeatherFrame":
        i = int((to_utc_hour(begin) - self.start) // HOUR)
        j = int((to_utc_hour(end) - self.start) // HOUR)
        if i < 0 or j > len(self) or i > j:
            raise OutOfRange(f"[{begin}, {end}) is outside the weather span")
        return WeatherFrame(self.start + i * HOUR, {k: v[i:j] for k, v in self.variables.items()})


@dataclass(frozen=True)
class GapPolicy:
    max_fill: int = 3
    max_gap_fraction: float = 0.05


@dataclass(frozen=True, eq=False)
class AlignedDataset:
    energy: TimeSeries
    weather: WeatherFrame
    energy_type: EnergyType

    def __post_init__(self):
        object.__setattr__(self, "energy_type", EnergyType(self.energy_type))
        if self.energy.start != self.weather.start or len(self.energy) != len(self.weather):
            raise ValueError("energy and weather must cover identical spans")

    def __len__(self) -> int:
        return len(self.energy)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AlignedDataset):
            return NotImplemented
        return (
            self.energy == other.energy
            and self.weather == other.weather
            and self.energy_type == other.energy_type
        )

    @property
    def start(self) -> pd.Timestamp:
        return self.energy.start

    @property
    def end(self) -> pd.Timestamp:
        return self.energy.end

    def slice_time(self, begin, end) -> "AlignedDataset":
        return AlignedDataset(
            self.energy.slice_time(begin, end),
            self.weather.slice_time(begin, end),
            self.energy_type,
        )

    def gap_summary(self) -> Dict[str, float]:
        out = {self.energy.name or "energy": float(np.isnan(self.energy.values).mean())}
        for k, v in self.weather.variables.items():
            out[k] = float(np.isnan(v).mean())
        return out


# -- parsing -----------------------------------------------------------------


def _open_text(source) -> io.TextIOBase:
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _read_table(source) -> Tuple[List[str], List[Tuple[int, List[str]]]]:
    """Return the header and ``(line number, cells)`` for every data row."""
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file: header row is mandatory", line=1) from None
        rows = [(reader.line_num, r) for r in reader if r]
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()
    if not header or header[0] != "timestamp":
        raise ParseError("first header column must be 'timestamp'", line=1)
    if len(set(header)) != len(header):
        raise ParseError("duplicate column names in header", line=1)
    for line, cells in rows:
        if len(cells) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(cells)}", line=line)
    return header, rows


def _parse_timestamps(rows) -> pd.DatetimeIndex:
    raw = [cells[0].strip() for _, cells in rows]
    parsed = pd.to_datetime(raw, utc=True, errors="coerce", format="ISO8601")
    bad = np.flatnonzero(pd.isna(parsed))
    if bad.size:
        line = rows[bad[0]][0]
        raise ParseError(f"malformed timestamp {raw[bad[0]]!r}", line=line)
    off = np.flatnonzero(parsed != parsed.floor("h"))
    if off.size:
        line = rows[off[0]][0]
        raise NonHourly(f"timestamp {raw[off[0]]!r} is not on the hour", line=line)
    return parsed


def _parse_column(rows, col: int) -> np.ndarray:
    out = np.empty(len(rows))
    for i, (line, cells) in enumerate(rows):
        cell = cells[col].strip()
        if not cell:
            out[i] = np.nan
            continue
        try:
            out[i] = float(cell)
        except ValueError:
            raise ParseError(f"non-numeric value {cell!r}", line=line) from None
    return out


def _to_grid(stamps: pd.DatetimeIndex, columns: Dict[str, np.ndarray], what: str):
    """Sort, resolve duplicates last-wins and reindex onto a gap-filled hourly grid."""
    if len(stamps) == 0:
        raise ParseError(f"{what}: no data rows")
    frame = pd.DataFrame(columns, index=stamps)
    dup = frame.index.duplicated(keep="last")
    if dup.any():
        log.warning("%s: %d duplicate timestamps resolved last-wins", what, int(dup.sum()))
        frame = frame[~dup]
    frame = frame.sort_index()
    full = pd.date_range(frame.index[0], frame.index[-1], freq="h")
    return full[0], frame.reindex(full)


def parse_generation_csv(source, column: str) -> TimeSeries:
    header, rows = _read_table(source)
    if column not in header:
        raise ParseError(f"column {column!r} not in header {header}", line=1)
    stamps = _parse_timestamps(rows)
    start, frame = _to_grid(stamps, {column: _parse_column(rows, header.index(column))}, column)
    return TimeSeries(start, frame[column].to_numpy(), name=column, unit="MW")


def parse_weather_csv(source) -> WeatherFrame:
    header, rows = _read_table(source)
    if len(header) < 2:
        raise ParseError("weather file needs at least one variable column", line=1)
    stamps = _parse_timestamps(rows)
    cols = {name: _parse_column(rows, i) for i, name in enumerate(header) if i > 0}
    start, frame = _to_grid(stamps, cols, "weather")
    return WeatherFrame(start, {k: frame[k].to_numpy() for k in cols})


# -- alignment ---------------------------------------------------------------


def _gap_runs(values: np.ndarray) -> Iterable[Tuple[int, int]]:
    """Yield ``(begin, end)`` for every maximal run of NaNs."""
    miss = np.isnan(values).astype(np.int8)
    edges = np.diff(np.concatenate(([0], miss, [0])))
    return zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1))


def forward_fill(values: np.ndarray, max_fill: int) -> np.ndarray:
    """Fill gap runs no longer than ``max_fill`` with the last present value.

    Longer runs are left untouched, as are gaps at the head of the series.
    """
    out = np.array(values, dtype=float)
    for b, e in _gap_runs(out):
        if b > 0 and e - b <= max_fill:
            out[b:e] = out[b - 1]
    return out


def align(energy: TimeSeries, weather: WeatherFrame, policy: GapPolicy = GapPolicy(),
          energy_type=None) -> AlignedDataset:
    begin = max(energy.start, weather.start)
    end = min(energy.end, weather.end)
    if end <= begin:
        raise NoOverlap(
            f"energy [{energy.start}, {energy.end}) and weather "
            f"[{weather.start}, {weather.end}) do not overlap"
        )
    e = energy.slice_time(begin, end)
    w = weather.slice_time(begin, end)
    e = e.with_values(forward_fill(e.values, policy.max_fill))
    w = WeatherFrame(begin, {k: forward_fill(v, policy.max_fill) for k, v in w.variables.items()})
    if energy_type is None:
        energy_type = EnergyType(energy.name.split("_")[0])
    ds = AlignedDataset(e, w, EnergyType(energy_type))
    for name, frac in ds.gap_summary().items():
        if frac > policy.max_gap_fraction:
            raise ExcessiveGaps(
                f"{name}: residual gap fraction {frac:.3f} exceeds {policy.max_gap_fraction}"
            )
    return ds


# -- canonical dataset file ---------------------------------------------------


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else repr(float(v))


def write_dataset_csv(ds: AlignedDataset, path) -> None:
    names = ds.weather.names
    cols = [ds.energy.values] + [ds.weather.variables[n] for n in names]
    stamps = ds.energy.timestamps.strftime("%Y-%m-%dT%H:00:00Z")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", ds.energy_type.column] + names)
        for i, ts in enumerate(stamps):
            w.writerow([ts] + [_fmt(c[i]) for c in cols])


def read_dataset_csv(path) -> AlignedDataset:
    """Read the canonical file written by :func:`write_dataset_csv`."""
    frame = parse_weather_csv(path)
    energy_cols = [n for n in frame.names if n in (t.column for t in EnergyType)]
    if len(energy_cols) != 1:
        raise ParseError(f"expected exactly one energy column, found {energy_cols}", line=1)
    col = energy_cols[0]
    energy = TimeSeries(frame.start, frame.variables[col], name=col, unit="MW")
    weather = WeatherFrame(frame.start, {k: v for k, v in frame.variables.items() if k != col})
    return AlignedDataset(energy, weather, EnergyType(col.split("_")[0]))
