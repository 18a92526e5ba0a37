"""``rescast`` command-line entry point.

Every command reads one JSON run configuration (``--config``); flags given on
the command line override the matching file values. Artifacts live in one
directory guarded by a lock file::

    <out>/dataset.csv                    canonical aligned dataset (ingest)
    <out>/models/<model_id>/             forecaster bundles (train)
    <out>/forecasts/<model_id>.csv       walk-forward runs (forecast, evaluate)
    <out>/reports/                       reports, comparison table, heat maps

Exit codes: 0 ok, 1 parse or missing input, 2 alignment, 3 fitting,
4 evaluation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import pandas as pd
from filelock import FileLock, Timeout

from rescast.core import HOUR, SplitSpec, to_utc_hour
from rescast.errors import (
    AlignmentError,
    DataError,
    EvaluationError,
    FeatureError,
    FitError,
    RescastError,
)
from rescast.evaluation import (
    REPORT_SCHEMA,
    ForecastRun,
    common_support,
    compare,
    evaluate,
    heatmap,
    heatmap_svg,
    write_comparison,
    write_heatmap_csv,
)
from rescast.forecasters import ForecastConfig, Forecaster, fit, forecast, split_dataset
from rescast.ingestion import (
    EnergyType,
    GapPolicy,
    align,
    parse_generation_csv,
    parse_weather_csv,
    read_dataset_csv,
    write_dataset_csv,
)

log = logging.getLogger("rescast")

EXIT_OK, EXIT_PARSE, EXIT_ALIGN, EXIT_FIT, EXIT_EVAL = 0, 1, 2, 3, 4
MODEL_KINDS = {"persistence": "persistence", "ml": "ml_direct", "stad": "stad_direct", "hybrid": "hybrid"}
_U64 = (1 << 64) - 1
_FORECAST_KEYS = {f.name for f in fields(ForecastConfig)} - {"seed"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    generation: Optional[Path] = None
    weather: Optional[Path] = None
    artifact_dir: Path = Path("artifacts")
    energy_type: EnergyType = EnergyType.SOLAR
    split: Optional[SplitSpec] = None  # None: the final 365 days are the test span
    gap_policy: GapPolicy = GapPolicy()
    forecast: Dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        self.energy_type = EnergyType(self.energy_type)
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or not 0 <= self.seed <= _U64:
            raise CliError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}", EXIT_PARSE)
        unknown = set(self.forecast) - _FORECAST_KEYS
        if unknown:
            raise CliError(f"unknown forecast options {sorted(unknown)}", EXIT_PARSE)

    @classmethod
    def from_dict(cls, d: dict, base: Optional[Path] = None) -> "RunConfig":
        d = dict(d)
        base = base or Path(".")
        out = {}
        for key in ("generation", "weather", "artifact_dir"):
            if d.get(key) is not None:
                p = Path(d.pop(key))
                out[key] = p if p.is_absolute() else base / p
            else:
                d.pop(key, None)
        if "energy_type" in d:
            out["energy_type"] = d.pop("energy_type")
        if d.get("split"):
            s = d.pop("split")
            out["split"] = SplitSpec(to_utc_hour(s["train_end"]), to_utc_hour(s["test_end"]))
        else:
            d.pop("split", None)
        if "gap_policy" in d:
            out["gap_policy"] = GapPolicy(**d.pop("gap_policy"))
        if "seed" in d:
            out["seed"] = d.pop("seed")
        out["forecast"] = d.pop("forecast", {})
        if d:
            raise CliError(f"unknown configuration keys {sorted(d)}", EXIT_PARSE)
        return cls(**out)

    def forecast_config(self) -> ForecastConfig:
        return ForecastConfig.from_dict({**self.forecast, "seed": self.seed})

    def split_for(self, data) -> SplitSpec:
        if self.split is not None:
            return self.split
        test_end = data.end
        return SplitSpec(test_end - 8760 * HOUR, test_end)

    @property
    def dataset_path(self) -> Path:
        return self.artifact_dir / "dataset.csv"

    @property
    def models_dir(self) -> Path:
        return self.artifact_dir / "models"


# -- helpers ----------------------------------------------------------------------


def _configure_logging() -> None:
    level = os.environ.get("RESCAST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> RunConfig:
    raw: dict = {}
    base = Path(".")
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file {path} not found", EXIT_PARSE)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CliError(f"config file {path}: {exc}", EXIT_PARSE) from exc
        base = path.parent
    for flag, key in (("generation", "generation"), ("weather", "weather"), ("out", "artifact_dir"),
                      ("energy_type", "energy_type"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            raw[key] = value
    # flag paths are relative to the working directory, file paths to the config file
    for key in ("generation", "weather", "artifact_dir"):
        if key in raw and getattr(args, {"artifact_dir": "out"}.get(key, key), None) is not None:
            raw[key] = str(Path(raw[key]).absolute())
    try:
        return RunConfig.from_dict(raw, base)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_PARSE) from exc


def _dataset(cfg: RunConfig):
    if not cfg.dataset_path.exists():
        raise CliError(f"{cfg.dataset_path} not found; run `rescast ingest` first", EXIT_PARSE)
    return read_dataset_csv(cfg.dataset_path)


def _bundles(cfg: RunConfig) -> List[Path]:
    if not cfg.models_dir.exists():
        return []
    return sorted(p for p in cfg.models_dir.iterdir() if (p / "manifest.json").exists())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_forecast(f: Forecaster, cfg: RunConfig, data) -> ForecastRun:
    spec = cfg.split_for(data)
    begin, end = spec.train_end, min(spec.test_end, data.end)
    if begin >= end:
        raise CliError(f"test span [{spec.train_end}, {spec.test_end}) holds no data", EXIT_EVAL)
    return forecast(f, data, (begin, end))


# -- commands ---------------------------------------------------------------------


def cmd_ingest(args, cfg: RunConfig) -> int:
    for key in ("generation", "weather"):
        path = getattr(cfg, key)
        if path is None or not Path(path).exists():
            raise CliError(f"{key} file {path} not found", EXIT_PARSE)
    energy = parse_generation_csv(cfg.generation, cfg.energy_type.column)
    weather = parse_weather_csv(cfg.weather)
    data = align(energy, weather, cfg.gap_policy, cfg.energy_type)
    cfg.artifact_dir.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(data, cfg.dataset_path)
    summary = {"start": str(data.start), "end": str(data.end), "hours": len(data),
               "gap_fractions": data.gap_summary()}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    data = _dataset(cfg)
    if data.energy_type != cfg.energy_type:
        raise CliError(f"dataset holds {data.energy_type.value}, config asks for {cfg.energy_type.value}",
                       EXIT_PARSE)
    train, _ = split_dataset(data, cfg.split_for(data))
    fcfg = cfg.forecast_config()
    f = fit(MODEL_KINDS[args.model], train, fcfg, n_days=args.n_days)
    out = f.save(cfg.models_dir / f.model_id)
    _write_json(out / "train_log.json", {"model_id": f.model_id, "seed": cfg.seed,
                                         "train_hours": len(train), "stage_seconds": f.timings,
                                         "config": fcfg.to_dict()})
    print(f"trained {f.model_id} -> {out}")
    return EXIT_OK


def cmd_forecast(args, cfg: RunConfig) -> int:
    data = _dataset(cfg)
    kind = MODEL_KINDS[args.model]
    bundles = [p for p in _bundles(cfg)
               if json.loads((p / "manifest.json").read_text())["kind"] == kind]
    if args.model == "persistence":
        bundles = [p for p in bundles if p.name == f"persistence_t-{args.n_days}"]
    if not bundles:
        raise CliError(f"no trained {kind} bundle in {cfg.models_dir}", EXIT_PARSE)
    (cfg.artifact_dir / "forecasts").mkdir(parents=True, exist_ok=True)
    for p in bundles:
        f = Forecaster.load(p)
        run = _run_forecast(f, cfg, data)
        run.to_csv(cfg.artifact_dir / "forecasts" / f"{f.model_id}.csv")
        print(f"{f.model_id}: {len(run.errors())} hours forecast, {len(run.skipped)} skipped")
    return EXIT_OK


def cmd_evaluate(args, cfg: RunConfig) -> int:
    data = _dataset(cfg)
    bundles = _bundles(cfg)
    if not bundles:
        raise CliError(f"no trained bundles in {cfg.models_dir}", EXIT_PARSE)
    runs = []
    for p in bundles:
        runs.append(_run_forecast(Forecaster.load(p), cfg, data))
    runs = common_support(runs)
    reports = [evaluate(r) for r in runs]
    rdir = cfg.artifact_dir / "reports"
    fdir = cfg.artifact_dir / "forecasts"
    rdir.mkdir(parents=True, exist_ok=True)
    fdir.mkdir(parents=True, exist_ok=True)
    for run, rep in zip(runs, reports):
        run.to_csv(fdir / f"{run.model_id}.csv")
        _write_json(rdir / f"{rep.model_id}.json", rep.to_dict())
        write_heatmap_csv(heatmap(run.predictions), rdir / f"heatmap_{rep.model_id}.csv")
    write_heatmap_csv(heatmap(runs[0].actuals), rdir / "heatmap_actual.csv")
    _write_json(rdir / "report.schema.json", REPORT_SCHEMA)
    rows = compare(reports)
    write_comparison(rows, rdir / "comparison.csv", rdir / "comparison.json")
    for row in rows:
        print(f"{row['model_id']:<20} MAE {row['mae']:.4f}  RMSE {row['rmse']:.4f}  "
              f"<10% {row['under_10']:.1f}")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    """Render heat-map SVGs and a Markdown summary from the evaluate outputs."""
    rdir = cfg.artifact_dir / "reports"
    comparison = rdir / "comparison.json"
    if not comparison.exists():
        raise CliError(f"{comparison} not found; run `rescast evaluate` first", EXIT_PARSE)
    rows = json.loads(comparison.read_text())
    for path in sorted(rdir.glob("heatmap_*.csv")):
        frame = pd.read_csv(path, index_col="month", float_precision="round_trip")
        svg = heatmap_svg(frame.to_numpy(dtype=float), title=path.stem.replace("heatmap_", ""))
        path.with_suffix(".svg").write_text(svg + "\n")
    lines = ["| model | MAE | RMSE | <10% | 10-15% | >15% | hours |",
             "|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['model_id']} | {r['mae']:.4f} | {r['rmse']:.4f} | {r['under_10']:.1f} | "
                     f"{r['between_10_15']:.1f} | {r['over_15']:.1f} | {r['n_hours']} |")
    text = "\n".join(lines) + "\n"
    (rdir / "summary.md").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    """Write synthetic solar and wind source CSVs (demo and testing aid)."""
    from rescast.synthetic import solar_like, wind_like, write_source_csvs

    out = Path(args.dir)
    out.mkdir(parents=True, exist_ok=True)
    write_source_csvs(solar_like(years=args.years, seed=cfg.seed), wind_like(years=args.years, seed=cfg.seed),
                      out / "generation.csv", out / "weather.csv")
    print(f"wrote {out / 'generation.csv'} and {out / 'weather.csv'}")
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "train": cmd_train, "forecast": cmd_forecast,
            "evaluate": cmd_evaluate, "report": cmd_report, "synth": cmd_synth}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= _U64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--energy-type", choices=[e.value for e in EnergyType])
    common.add_argument("--seed", type=_u64)
    common.add_argument("--out", help="artifact directory")
    parser = argparse.ArgumentParser(prog="rescast", description="Short-term solar and wind forecasting.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("ingest", parents=[common], help="parse and align source CSVs")
    p.add_argument("--generation")
    p.add_argument("--weather")
    for name in ("train", "forecast"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--model", choices=list(MODEL_KINDS), required=True)
        p.add_argument("--n-days", type=int, default=2, help="persistence lag in days")
    sub.add_parser("evaluate", parents=[common], help="forecast the test span with every bundle and score")
    sub.add_parser("report", parents=[common], help="render heat maps and a summary table")
    p = sub.add_parser("synth", parents=[common], help="write synthetic source CSVs")
    p.add_argument("dir")
    p.add_argument("--years", type=int, default=4)
    return parser


_VALUE_ERROR_CODES = {"ingest": EXIT_PARSE, "train": EXIT_FIT, "forecast": EXIT_EVAL, "evaluate": EXIT_EVAL}


def _exit_code(exc: RescastError, command: str) -> int:
    if isinstance(exc, AlignmentError):
        return EXIT_ALIGN
    if isinstance(exc, EvaluationError):
        return EXIT_EVAL
    if isinstance(exc, DataError):
        return EXIT_PARSE if command == "ingest" else EXIT_FIT
    if isinstance(exc, (FitError, FeatureError)):
        return EXIT_FIT
    return EXIT_FIT


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "synth":
            return cmd_synth(args, cfg)
        cfg.artifact_dir.mkdir(parents=True, exist_ok=True)
        lock = FileLock(str(cfg.artifact_dir / ".rescast.lock"), timeout=0)
        try:
            with lock:
                return COMMANDS[args.command](args, cfg)
        except Timeout:
            raise CliError(f"{cfg.artifact_dir} is in use by another rescast process", EXIT_PARSE)
    except CliError as exc:
        print(f"rescast {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except RescastError as exc:
        print(f"rescast {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc, args.command)
    except OSError as exc:
        print(f"rescast {args.command}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValueError as exc:
        print(f"rescast {args.command}: {exc}", file=sys.stderr)
        return _VALUE_ERROR_CODES.get(args.command, EXIT_PARSE)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
