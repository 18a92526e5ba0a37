"""Synthetic solar- and wind-like datasets for tests, demos and benchmarks."""

from __future__ import annotations

import numpy as np
import pandas as pd

from rescast.core import TimeSeries
from rescast.ingestion import AlignedDataset, EnergyType, WeatherFrame


def _ar1(rng, n, phi, sigma):
    z = np.empty(n)
    z[0] = rng.normal(0, sigma / np.sqrt(1 - phi ** 2))
    eps = rng.normal(0, sigma, n)
    for i in range(1, n):
        z[i] = phi * z[i - 1] + eps[i]
    return z


def _calendar(start, hours):
    stamps = pd.date_range(start, periods=hours, freq="h", tz="UTC")
    hod = stamps.hour.to_numpy() + 0.5
    doy = stamps.dayofyear.to_numpy().astype(float)
    return stamps, hod, doy


def solar_like(start="2017-01-01", years: int = 4, seed: int = 0, capacity: float = 3000.0,
               latitude: float = 38.0) -> AlignedDataset:
    """Clear-sky daily and yearly shape damped by an autocorrelated cloud process.

    Humidity and visibility respond to the same cloud process, so the weather
    forecasts carry information about the generation at the target hour.
    """
    rng = np.random.default_rng(seed)
    n = int(round(years * 8766))
    stamps, hod, doy = _calendar(start, n)
    decl = np.radians(23.44) * np.sin(2 * np.pi * (doy - 81) / 365.0)
    lat = np.radians(latitude)
    # solar noon near 10:00 UTC at Greek longitudes
    omega = np.radians(15.0 * (hod - 10.5))
    elev = np.sin(lat) * np.sin(decl) + np.cos(lat) * np.cos(decl) * np.cos(omega)
    clear = np.clip(elev, 0.0, None)
    cloud = 1.0 / (1.0 + np.exp(-(_ar1(rng, n, 0.985, 0.25) - 0.8)))
    power = capacity * clear * (1.0 - 0.8 * cloud) + rng.normal(0, 0.01 * capacity, n) * (clear > 0)
    power = np.clip(power, 0.0, None)
    season = np.sin(2 * np.pi * (doy - 110) / 365.0)
    weather = {
        "temperature": 17 + 9 * season + 6 * clear - 3 * cloud + rng.normal(0, 0.8, n),
        "humidity": 45 + 40 * cloud - 10 * clear + rng.normal(0, 3.0, n),
        "visibility": 25 - 15 * cloud + rng.normal(0, 1.5, n),
        "wind_speed": np.abs(4 + _ar1(rng, n, 0.95, 0.5) + 2 * cloud),
    }
    energy = TimeSeries(stamps[0], power, name="solar_mw", unit="MW")
    return AlignedDataset(energy, WeatherFrame(stamps[0], weather), EnergyType.SOLAR)


def wind_like(start="2017-01-01", years: int = 4, seed: int = 0, capacity: float = 4000.0) -> AlignedDataset:
    """Autocorrelated wind speed with yearly modulation through a cubic power curve."""
    rng = np.random.default_rng(seed)
    n = int(round(years * 8766))
    stamps, hod, doy = _calendar(start, n)
    mean_speed = 7 + 1.5 * np.cos(2 * np.pi * (doy - 15) / 365.0) + 0.6 * np.sin(2 * np.pi * hod / 24)
    speed = np.clip(mean_speed + _ar1(rng, n, 0.97, 0.7), 0.0, None)
    curve = np.clip((speed - 3.0) / 9.0, 0.0, 1.0) ** 3
    power = np.clip(capacity * curve + rng.normal(0, 0.02 * capacity, n), 0.0, capacity)
    weather = {
        "wind_speed": speed + rng.normal(0, 0.6, n),
        "gust": 1.4 * speed + np.abs(rng.normal(0, 1.0, n)),
    }
    energy = TimeSeries(stamps[0], power, name="wind_mw", unit="MW")
    return AlignedDataset(energy, WeatherFrame(stamps[0], weather), EnergyType.WIND)


def write_source_csvs(solar: AlignedDataset, wind: AlignedDataset, generation_path, weather_path) -> None:
    """Write a generation file (``timestamp,solar_mw,wind_mw``) and one merged weather file."""
    stamps = solar.energy.timestamps.strftime("%Y-%m-%dT%H:00:00Z")
    pd.DataFrame({"timestamp": stamps, "solar_mw": solar.energy.values,
                  "wind_mw": wind.energy.values}).to_csv(generation_path, index=False, float_format="%.6f")
    weather = {"timestamp": stamps}
    weather.update(solar.weather.variables)
    weather["gust"] = wind.weather.variables["gust"]
    pd.DataFrame(weather).to_csv(weather_path, index=False, float_format="%.6f")
