"""Error metrics, error-interval shares, month-by-hour heat maps and comparison tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from rescast.core import TimeSeries
from rescast.errors import EmptyRun, MixedEnergyTypes

# absolute scaled error thresholds, i.e. fractions of the historical range
LOW_THRESHOLD = 0.10
HIGH_THRESHOLD = 0.15


@dataclass(frozen=True, eq=False)
class ForecastRun:
    predictions: TimeSeries
    actuals: TimeSeries
    model_id: str
    energy_type: str
    skipped: tuple = ()

    def __post_init__(self):
        if self.predictions.start != self.actuals.start or len(self.predictions) != len(self.actuals):
            raise ValueError("predictions and actuals must share span and length")

    def errors(self) -> np.ndarray:
        """Forecast errors over hours where both values are present."""
        e = self.predictions.values - self.actuals.values
        return e[~np.isnan(e)]

    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.predictions.values) & ~np.isnan(self.actuals.values)

    def restrict(self, mask: np.ndarray) -> "ForecastRun":
        """Blank out hours outside ``mask``."""
        p = np.where(mask, self.predictions.values, np.nan)
        return ForecastRun(self.predictions.with_values(p), self.actuals, self.model_id,
                           self.energy_type, self.skipped)

    def to_csv(self, path) -> None:
        frame = pd.DataFrame({
            "timestamp": self.actuals.timestamps.strftime("%Y-%m-%dT%H:00:00Z"),
            "actual": self.actuals.values,
            "predicted": self.predictions.values,
        })
        frame.to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path, model_id: str, energy_type: str) -> "ForecastRun":
        frame = pd.read_csv(path, float_precision="round_trip")
        start = pd.Timestamp(frame["timestamp"].iloc[0])
        return cls(TimeSeries(start, frame["predicted"].to_numpy(float), name="predicted", unit="scaled"),
                   TimeSeries(start, frame["actual"].to_numpy(float), name="actual", unit="scaled"),
                   model_id, energy_type)


def _errors(run) -> np.ndarray:
    e = run.errors() if isinstance(run, ForecastRun) else np.asarray(run, dtype=float)
    if e.size == 0:
        raise EmptyRun("run has no hours with both a forecast and an actual value")
    return e


def mae(run) -> float:
    return float(np.mean(np.abs(_errors(run))))


def rmse(run) -> float:
    e = _errors(run)
    return float(np.sqrt(np.mean(e * e)))


def error_intervals(run) -> Dict[str, float]:
    """Percent of hours with |e| < 0.10, 0.10 <= |e| <= 0.15 and |e| > 0.15."""
    a = np.abs(_errors(run))
    n = a.size
    under = int(np.count_nonzero(a < LOW_THRESHOLD))
    over = int(np.count_nonzero(a > HIGH_THRESHOLD))
    between = n - under - over
    return {
        "under_10": 100.0 * under / n,
        "between_10_15": 100.0 * between / n,
        "over_15": 100.0 * over / n,
    }


@dataclass(frozen=True)
class EvaluationReport:
    model_id: str
    energy_type: str
    mae: float
    rmse: float
    interval_pcts: Dict[str, float]
    n_hours: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["model_id", "energy_type", "mae", "rmse", "interval_pcts", "n_hours"],
    "properties": {
        "model_id": {"type": "string"},
        "energy_type": {"enum": ["solar", "wind"]},
        "mae": {"type": "number", "minimum": 0},
        "rmse": {"type": "number", "minimum": 0},
        "n_hours": {"type": "integer", "minimum": 1},
        "interval_pcts": {
            "type": "object",
            "required": ["under_10", "between_10_15", "over_15"],
            "properties": {
                k: {"type": "number", "minimum": 0, "maximum": 100}
                for k in ("under_10", "between_10_15", "over_15")
            },
        },
    },
}


def evaluate(run: ForecastRun) -> EvaluationReport:
    return EvaluationReport(run.model_id, run.energy_type, mae(run), rmse(run),
                            error_intervals(run), int(run.errors().size))


def common_support(runs: Sequence[ForecastRun]) -> List[ForecastRun]:
    """Restrict every run to the hours where all runs have a forecast."""
    if not runs:
        return []
    ref = runs[0]
    for r in runs[1:]:
        if r.actuals.start != ref.actuals.start or len(r.actuals) != len(ref.actuals):
            raise ValueError("runs must share one span")
    mask = np.logical_and.reduce([r.valid_mask() for r in runs])
    return [r.restrict(mask) for r in runs]


def compare(reports: Sequence[EvaluationReport]) -> List[dict]:
    """Rows sorted by MAE ascending (stable for ties)."""
    if not reports:
        raise ValueError("need at least one report")
    types = {r.energy_type for r in reports}
    if len(types) > 1:
        raise MixedEnergyTypes(f"reports mix energy types {sorted(types)}")
    rows = [
        {
            "model_id": r.model_id,
            "energy_type": r.energy_type,
            "mae": r.mae,
            "rmse": r.rmse,
            **r.interval_pcts,
            "n_hours": r.n_hours,
        }
        for r in reports
    ]
    return sorted(rows, key=lambda row: row["mae"])


def write_comparison(rows: List[dict], csv_path=None, json_path=None) -> None:
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


# -- heat maps ----------------------------------------------------------------------


def heatmap(series: TimeSeries) -> np.ndarray:
    """12 x 24 matrix of mean value per (month, hour); cells without data are NaN."""
    ok = series.present
    stamps = series.timestamps[ok]
    vals = series.values[ok]
    cell = (stamps.month.to_numpy() - 1) * 24 + stamps.hour.to_numpy()
    sums = np.bincount(cell, weights=vals, minlength=288)
    counts = np.bincount(cell, minlength=288)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return out.reshape(12, 24)


def write_heatmap_csv(matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month"] + [f"h{h:02d}" for h in range(24)])
        for m in range(12):
            w.writerow([m + 1] + ["" if np.isnan(v) else repr(float(v)) for v in matrix[m]])


def heatmap_svg(matrix: np.ndarray, title: str = "", cell: int = 22) -> str:
    """Minimal SVG rendering: darker cells mean higher generation."""
    lo = np.nanmin(matrix) if np.isfinite(matrix).any() else 0.0
    hi = np.nanmax(matrix) if np.isfinite(matrix).any() else 1.0
    span = hi - lo if hi > lo else 1.0
    left, top = 40, 30
    w, h = left + 24 * cell + 10, top + 12 * cell + 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-size="10">']
    if title:
        parts.append(f'<text x="{left}" y="15">{title}</text>')
    for m in range(12):
        parts.append(f'<text x="5" y="{top + m * cell + cell * 0.7:.1f}">{m + 1}</text>')
        for hr in range(24):
            v = matrix[m, hr]
            if np.isnan(v):
                fill = "#ffffff"
            else:
                g = int(round(255 * (1 - (v - lo) / span)))
                fill = f"#ff{g:02x}{g // 2:02x}"
            parts.append(
                f'<rect x="{left + hr * cell}" y="{top + m * cell}" width="{cell}" '
                f'height="{cell}" fill="{fill}" stroke="#ccc"/>'
            )
    for hr in range(0, 24, 3):
        parts.append(f'<text x="{left + hr * cell + 2}" y="{top + 12 * cell + 14}">{hr}</text>')
    parts.append("</svg>")
    return "\n".join(parts)
