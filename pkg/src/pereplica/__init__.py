"""Daily liquid replication of private-equity benchmarks.

Decodes time-varying factor weights behind a NAV track with a constrained
linear-Gaussian state-space filter, compresses downside returns, adds VIX
tail-risk and risk-off momentum overlays, and reports a full statistics table.
"""
from ._accel import BACKEND
from .asymmetry import AsymmetryConfig, apply_asymmetry
from .decoder import (
    DecodeResult,
    FitConfig,
    StateSpaceModel,
    WeightBounds,
    fit_mle,
    log_likelihood,
    sanity_check_weights,
)
from .stats import StatsTable, full_table
from .timeseries import (
    AssetPanel,
    DataError,
    DateIndex,
    NavSeries,
    ReturnSeries,
    align_inner,
    load_csv,
    nav_to_returns,
    resample_quarterly,
    returns_to_nav,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AsymmetryConfig", "apply_asymmetry", "DecodeResult", "FitConfig", "StateSpaceModel",
    "WeightBounds", "fit_mle", "log_likelihood", "sanity_check_weights", "StatsTable", "full_table",
    "AssetPanel", "DataError", "DateIndex", "NavSeries", "ReturnSeries", "align_inner", "load_csv",
    "nav_to_returns", "resample_quarterly", "returns_to_nav",
]
