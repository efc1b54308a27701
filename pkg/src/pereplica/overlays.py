"""Asymmetric overlays: a VIX tail-risk hedge and a risk-off momentum sleeve.

Signals are emitted on the input dates with NaN during warm-up. Every
allocation is decided at a day's close and held over the *next* day's return,
so overlay returns never use same-day information.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .timeseries import AssetPanel, DataError, ReturnSeries, Series


@dataclass(frozen=True, eq=False)
class Signal:
    """A signal series plus a mask of days where it was set to 0 for zero dispersion."""

    series: Series
    degenerate: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.series.values

    @property
    def index(self):
        return self.series.index


@dataclass(frozen=True, eq=False)
class VixInputs:
    spot_vix: Series
    front_future: Series
    mid_future: Series
    st_future_returns: ReturnSeries
    mt_future_returns: ReturnSeries

    def __post_init__(self):
        ref = self.spot_vix.dates
        for s in (self.front_future, self.mid_future, self.st_future_returns, self.mt_future_returns):
            if not np.array_equal(s.dates, ref):
                raise DataError("VIX inputs must share one date index")
        for s in (self.spot_vix, self.front_future, self.mid_future):
            if not (np.all(np.isfinite(s.values)) and np.all(s.values > 0)):
                raise DataError(f"VIX level series {s.name!r} must be finite and > 0")

    @property
    def index(self):
        return self.spot_vix.index

    @property
    def dates(self):
        return self.spot_vix.dates

    def __len__(self):
        return len(self.spot_vix)

    def _take(self, sel):
        return VixInputs(self.spot_vix.take(sel), self.front_future.take(sel), self.mid_future.take(sel),
                         self.st_future_returns.take(sel), self.mt_future_returns.take(sel))

    def take(self, sel):
        return self._take(sel)

    @classmethod
    def from_table(cls, dates, names, data) -> "VixInputs":
        need = ("spot", "front", "mid", "st_ret", "mt_ret")
        missing = [n for n in need if n not in names]
        if missing:
            raise DataError(f"VIX CSV missing columns {missing}")
        col = {n: data[:, names.index(n)] for n in need}
        return cls(Series(dates, col["spot"], "spot"), Series(dates, col["front"], "front"),
                   Series(dates, col["mid"], "mid"), ReturnSeries(dates, col["st_ret"], "st_ret"),
                   ReturnSeries(dates, col["mt_ret"], "mt_ret"))


@dataclass(frozen=True)
class TailRiskConfig:
    window: int = 20
    var_thresh: float = 0.0
    curve_thresh: float = 1.0
    z_thresh: float = 1.0
    z_window: int = 252
    st_mt_split: float = 0.5
    overlay_weight: float = 0.1
    scale: float = 1.0

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("tailrisk.window must be >= 2")
        if self.z_window < 20:
            raise ValueError("tailrisk.z_window must be >= 20")
        if not 0.0 <= self.st_mt_split <= 1.0:
            raise ValueError("tailrisk.st_mt_split must be in [0, 1]")
        if not 0.0 <= self.overlay_weight <= 1.0:
            raise ValueError("tailrisk.overlay_weight must be in [0, 1]")


@dataclass(frozen=True)
class HysteresisConfig:
    trend_window: int = 60
    enter_thresh: float = -1.0
    exit_thresh: float = 0.0
    confirm_days: int = 5

    def __post_init__(self):
        if not self.enter_thresh < self.exit_thresh:
            raise ValueError("hysteresis requires enter_thresh < exit_thresh")
        if self.confirm_days < 1:
            raise ValueError("hysteresis.confirm_days must be >= 1")
        if self.trend_window < 2:
            raise ValueError("hysteresis.trend_window must be >= 2")


@dataclass(frozen=True)
class MomentumConfig:
    hysteresis: HysteresisConfig = HysteresisConfig()
    momentum_window: int = 60
    vol_window: int = 60
    riskoff_vol_target: float = 0.10
    equity_asset: str | None = None
    cross_assets: tuple | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.momentum_window < 2:
            raise ValueError("momentum.momentum_window must be >= 2")
        if self.vol_window < 2:
            raise ValueError("momentum.vol_window must be >= 2")


# ---------------------------------------------------------------------------
# Rolling helpers
# ---------------------------------------------------------------------------

def _rolling(values: np.ndarray, window: int):
    """Trailing windows ending at each day from ``window - 1`` on."""
    return sliding_window_view(values, window)


def _as_levels(x) -> tuple:
    if isinstance(x, Series):
        return x.index, np.asarray(x.values, dtype=float), x.name
    raise TypeError("expected a Series")


# ---------------------------------------------------------------------------
# Tail-risk signals
# ---------------------------------------------------------------------------

def vol_adjusted_return(front_future: Series, window: int = 20) -> Signal:
    """Trailing ``window``-day cumulative return over the std of daily returns in that window."""
    idx, lv, _ = _as_levels(front_future)
    if lv.size < window + 1:
        raise DataError(f"need at least {window + 1} levels for a {window}-day signal")
    daily = lv[1:] / lv[:-1] - 1.0
    cum = lv[window:] / lv[:-window] - 1.0
    sd = _rolling(daily, window).std(axis=1, ddof=1)
    out = np.full(lv.size, np.nan)
    deg = np.zeros(lv.size, dtype=bool)
    zero = sd == 0.0
    out[window:] = np.where(zero, 0.0, cum / np.where(zero, 1.0, sd))
    deg[window:] = zero
    return Signal(Series(idx, out, "vol_adjusted_return"), deg)


def curve_ratio(front_future: Series, spot_vix: Series) -> Series:
    """Front future over spot; below 1 means backwardation."""
    if not np.array_equal(front_future.dates, spot_vix.dates):
        raise DataError("front future and spot VIX are misaligned")
    return Series(front_future.index, front_future.values / spot_vix.values, "curve_ratio")


def level_zscore(spot_vix: Series, z_window: int = 252) -> Signal:
    """Deviation of the level from its trailing mean, in trailing sample stds.

    The window is the ``z_window`` observations ending at (and including) the day.
    """
    idx, lv, _ = _as_levels(spot_vix)
    if lv.size < z_window:
        raise DataError(f"need at least {z_window} levels for the z-score")
    win = _rolling(lv, z_window)
    mu = win.mean(axis=1)
    sd = win.std(axis=1, ddof=1)
    out = np.full(lv.size, np.nan)
    deg = np.zeros(lv.size, dtype=bool)
    zero = sd == 0.0
    out[z_window - 1:] = np.where(zero, 0.0, (lv[z_window - 1:] - mu) / np.where(zero, 1.0, sd))
    deg[z_window - 1:] = zero
    return Signal(Series(idx, out, "level_zscore"), deg)


Combiner = Callable[[np.ndarray, np.ndarray, np.ndarray, TailRiskConfig], np.ndarray]


def threshold_rule(var_sig: np.ndarray, ratio: np.ndarray, z: np.ndarray,
                   cfg: TailRiskConfig) -> np.ndarray:
    """Stress when all three signals agree; NaN (warm-up) never qualifies."""
    with np.errstate(invalid="ignore"):
        return (var_sig > cfg.var_thresh) & (ratio < cfg.curve_thresh) & (z > cfg.z_thresh)


@dataclass(frozen=True, eq=False)
class TailRiskResult:
    index: object
    allocation: np.ndarray  # held ST/MT weights per day, shape (T, 2)
    stress: np.ndarray
    overlay: ReturnSeries
    signals: dict


def tail_risk_allocation(inputs: VixInputs, cfg: TailRiskConfig | None = None,
                         combiner: Combiner = threshold_rule) -> TailRiskResult:
    """Long ST/MT VIX futures on the day after the signals align.

    ``allocation[t]`` is the position held over day ``t``, decided from data
    up to day ``t - 1``; ``overlay[t] = allocation[t] . (st_ret[t], mt_ret[t])``.
    """
    cfg = cfg or TailRiskConfig()
    need = max(cfg.window + 1, cfg.z_window)
    if len(inputs) < need:
        raise DataError(f"tail-risk overlay needs at least {need} days of VIX data")
    var_sig = vol_adjusted_return(inputs.front_future, cfg.window)
    ratio = curve_ratio(inputs.front_future, inputs.spot_vix)
    z = level_zscore(inputs.spot_vix, cfg.z_window)
    stress = np.asarray(combiner(var_sig.values, ratio.values, z.values, cfg), dtype=bool)
    target = np.where(stress[:, None], cfg.overlay_weight * np.array([cfg.st_mt_split, 1.0 - cfg.st_mt_split]), 0.0)
    held = np.zeros_like(target)
    held[1:] = target[:-1]
    fut = np.column_stack([inputs.st_future_returns.values, inputs.mt_future_returns.values])
    overlay = (held * fut).sum(axis=1)
    return TailRiskResult(inputs.index, held, stress,
                          ReturnSeries(inputs.index, overlay, "tailrisk"),
                          {"vol_adjusted_return": var_sig, "curve_ratio": ratio, "level_zscore": z})


# ---------------------------------------------------------------------------
# Risk-off momentum
# ---------------------------------------------------------------------------

def equity_trend(equity_returns: ReturnSeries, trend_window: int = 60) -> Signal:
    """t-statistic of the trailing mean daily return: ``mean / std * sqrt(window)``."""
    v = np.asarray(equity_returns.values, dtype=float)
    if v.size < trend_window:
        raise DataError(f"need at least {trend_window} returns for the trend score")
    win = _rolling(v, trend_window)
    mu = win.mean(axis=1)
    sd = win.std(axis=1, ddof=1)
    out = np.full(v.size, np.nan)
    deg = np.zeros(v.size, dtype=bool)
    zero = sd == 0.0
    out[trend_window - 1:] = np.where(zero, 0.0, mu / np.where(zero, 1.0, sd) * math.sqrt(trend_window))
    deg[trend_window - 1:] = zero
    return Signal(Series(equity_returns.index, out, "equity_trend"), deg)


def hysteresis_filter(trend, cfg: HysteresisConfig | None = None) -> np.ndarray:
    """Two-threshold regime switch: 0 = risk-on (OFF), 1 = risk-off (ON).

    Starts OFF; turns ON after ``confirm_days`` consecutive observations below
    ``enter_thresh`` and back OFF after ``confirm_days`` consecutive
    observations above ``exit_thresh``. NaN breaks both runs.
    """
    cfg = cfg or HysteresisConfig()
    v = np.ascontiguousarray(getattr(trend, "values", trend), dtype=np.float64)
    return kernels.hysteresis_states(v, float(cfg.enter_thresh), float(cfg.exit_thresh),
                                     int(cfg.confirm_days))


@dataclass(frozen=True, eq=False)
class MomentumResult:
    index: object
    asset_names: tuple
    weights: np.ndarray  # held weights per day, shape (T, K)
    regime: np.ndarray
    overlay: ReturnSeries


def riskoff_momentum_allocation(regime, cross_asset_returns: AssetPanel, momentum_window: int = 60,
                                vol_window: int = 60, riskoff_vol_target: float = 0.10,
                                periods_per_year: int = 252) -> MomentumResult:
    """Vol-targeted, inverse-vol long book in cross assets with positive momentum while risk-off.

    ``regime[t]`` is known at the close of day ``t``; weights decided then are
    held over day ``t + 1``. Days without a qualifying asset hold nothing.
    """
    R = cross_asset_returns.returns
    T, K = R.shape
    regime = np.asarray(regime)
    if regime.shape != (T,):
        raise DataError("regime and cross-asset panel are misaligned")
    if momentum_window < 2 or vol_window < 2:
        raise ValueError("windows must be >= 2")
    growth = np.full((T, K), np.nan)
    if T >= momentum_window:
        win = sliding_window_view(1.0 + R, momentum_window, axis=0)  # (T - w + 1, K, w)
        growth[momentum_window - 1:] = np.prod(win, axis=2) - 1.0
    decided = np.zeros((T, K))
    for t in np.flatnonzero(regime == 1):
        if t < vol_window - 1 or t < momentum_window - 1:
            continue
        pick = np.flatnonzero(growth[t] > 0.0)
        if pick.size == 0:
            continue
        window = R[t - vol_window + 1:t + 1][:, pick]
        sd = window.std(axis=0, ddof=1)
        if np.any(sd == 0.0):
            continue
        raw = 1.0 / sd
        cov = np.atleast_2d(np.cov(window, rowvar=False, ddof=1))
        port_vol = math.sqrt(float(raw @ cov @ raw) * periods_per_year)
        if port_vol == 0.0:
            continue
        decided[t, pick] = raw * (riskoff_vol_target / port_vol)
    held = np.zeros_like(decided)
    held[1:] = decided[:-1]
    overlay = (held * R).sum(axis=1)
    return MomentumResult(cross_asset_returns.index, cross_asset_returns.asset_names, held,
                          regime.astype(np.int8), ReturnSeries(cross_asset_returns.index, overlay, "momentum"))


def riskoff_momentum(panel: AssetPanel, cfg: MomentumConfig | None = None) -> MomentumResult:
    """Trend score, hysteresis regime and momentum book from one panel."""
    cfg = cfg or MomentumConfig()
    eq_name = cfg.equity_asset or panel.asset_names[0]
    cross = cfg.cross_assets or tuple(n for n in panel.asset_names if n != eq_name)
    trend = equity_trend(panel.column(eq_name), cfg.hysteresis.trend_window)
    regime = hysteresis_filter(trend, cfg.hysteresis)
    return riskoff_momentum_allocation(regime, panel.select(cross), cfg.momentum_window,
                                       cfg.vol_window, cfg.riskoff_vol_target)


def apply_overlay(base: ReturnSeries, overlay: ReturnSeries, scale: float) -> ReturnSeries:
    """Capital-additive combination ``base + scale * overlay`` on identical dates."""
    if not np.array_equal(base.dates, overlay.dates):
        raise DataError("base and overlay are misaligned")
    return ReturnSeries(base.index, base.values + scale * overlay.values, base.name)
