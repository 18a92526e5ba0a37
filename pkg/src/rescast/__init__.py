"""Short-term solar and wind generation forecasting.

Persistence baselines, a from-scratch Extra-Trees ensemble, a Fourier/trend
additive decomposer and the hybrid model that forecasts the decomposer's
residuals, plus MAE/RMSE and error-interval reporting.
"""

from rescast.core import ScalerParams, SplitSpec, TimeSeries

__version__ = "0.1.0"

__all__ = ["ScalerParams", "SplitSpec", "TimeSeries", "__version__"]
