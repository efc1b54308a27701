"""Performance statistics: annualized return/vol, moments, Sharpe, Sortino, drawdowns.

Conventions used throughout:

* annual return is geometric: ``prod(1 + r) ** (ppy / n) - 1``;
* Sharpe is annual return over annual vol with a zero risk-free rate, *not*
  the excess-mean form;
* kurtosis is excess kurtosis, bias-adjusted;
* ``periods_per_year`` is always passed explicitly (252 daily, 4 quarterly).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import kernels

DAILY = 252
QUARTERLY = 4


class StatsError(ValueError):
    """A statistic is undefined for the given series."""


def _values(r) -> np.ndarray:
    v = getattr(r, "values", r)
    return np.asarray(v, dtype=np.float64)


def annual_return(r, periods_per_year: int) -> float:
    v = _values(r)
    if v.size < 1:
        raise StatsError("annual_return needs at least one period")
    growth = float(np.prod(1.0 + v))
    return growth ** (periods_per_year / v.size) - 1.0


def annual_vol(r, periods_per_year: int) -> float:
    v = _values(r)
    if v.size < 2:
        raise StatsError("annual_vol needs at least two periods")
    return float(np.std(v, ddof=1)) * math.sqrt(periods_per_year)


def sharpe_from(ann_return: float, ann_vol: float) -> float:
    if not ann_vol > 0:
        raise StatsError("undefined Sharpe: zero volatility")
    return ann_return / ann_vol


def sharpe(r, periods_per_year: int) -> float:
    return sharpe_from(annual_return(r, periods_per_year), annual_vol(r, periods_per_year))


def downside_deviation(r, periods_per_year: int) -> float:
    """Annualized root-mean-square of ``min(r, 0)`` over all periods."""
    v = _values(r)
    return math.sqrt(float(np.mean(np.minimum(v, 0.0) ** 2))) * math.sqrt(periods_per_year)


def sortino(r, periods_per_year: int) -> float:
    v = _values(r)
    if not np.any(v < 0):
        raise StatsError("undefined Sortino: no negative returns")
    return annual_return(v, periods_per_year) / downside_deviation(v, periods_per_year)


def _central_moments(v):
    if v.size < 4:
        raise StatsError("moments need at least four periods")
    d = v - v.mean()
    m2 = float(np.mean(d * d))
    if m2 == 0.0:
        raise StatsError("moments undefined for zero variance")
    return d, m2


def skew(r) -> float:
    """Adjusted Fisher-Pearson sample skewness."""
    v = _values(r)
    d, m2 = _central_moments(v)
    n = v.size
    g1 = float(np.mean(d ** 3)) / m2 ** 1.5
    return g1 * math.sqrt(n * (n - 1)) / (n - 2)


def kurtosis(r) -> float:
    """Bias-adjusted excess kurtosis."""
    v = _values(r)
    d, m2 = _central_moments(v)
    n = v.size
    g2 = float(np.mean(d ** 4)) / m2 ** 2 - 3.0
    return ((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3))


def underwater(r) -> np.ndarray:
    """Per-period drawdown depth ``1 - NAV / running peak`` (NAV starts at 1)."""
    v = np.ascontiguousarray(_values(r))
    return kernels.underwater(v)


def max_drawdown(r) -> float:
    v = _values(r)
    if v.size < 1:
        raise StatsError("max_drawdown needs at least one period")
    return float(max(0.0, underwater(v).max()))


def worst10_dd(r) -> float:
    """90th percentile (linear interpolation) of the underwater series."""
    v = _values(r)
    if v.size < 10:
        raise StatsError("worst10_dd needs at least ten periods")
    return float(np.percentile(underwater(v), 90.0, method="linear"))


def ratio(ann_return: float, denominator: float, what: str = "drawdown") -> float:
    if not denominator > 0:
        raise StatsError(f"undefined return/{what}: zero denominator")
    return ann_return / denominator


def ret_over_maxdd(r, periods_per_year: int) -> float:
    return ratio(annual_return(r, periods_per_year), max_drawdown(r), "maxDD")


def ret_over_worst10dd(r, periods_per_year: int) -> float:
    return ratio(annual_return(r, periods_per_year), worst10_dd(r), "worst10DD")


@dataclass(frozen=True)
class StatsTable:
    annual_return: float
    annual_vol: float
    skew: float
    kurtosis: float
    sharpe: float
    sortino: float
    max_dd: float
    worst10_dd: float
    ret_over_maxdd: float
    ret_over_worst10dd: float
    periods_per_year: int

    def as_dict(self) -> dict:
        return asdict(self)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "value"])
        for f in fields(self):
            val = getattr(self, f.name)
            w.writerow([f.name, str(val) if f.name == "periods_per_year" else f"{val:.6g}"])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path) -> "StatsTable":
        return cls.parse_csv(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def parse_csv(cls, text: str) -> "StatsTable":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["metric", "value"]:
            raise StatsError("stats CSV must have header metric,value")
        vals = {k: v for k, v in rows[1:]}
        kw = {}
        for f in fields(cls):
            if f.name not in vals:
                raise StatsError(f"stats CSV missing metric {f.name!r}")
            kw[f.name] = int(vals[f.name]) if f.name == "periods_per_year" else float(vals[f.name])
        return cls(**kw)


def full_table(r, periods_per_year: int) -> StatsTable:
    """Every metric on one series; errors are re-raised with the metric name."""
    v = _values(r)
    if not np.all(np.isfinite(v)):
        raise StatsError("series contains non-finite values")
    out = {}

    def put(name, fn):
        try:
            out[name] = fn()
        except StatsError as exc:
            raise StatsError(f"{name}: {exc}") from None

    put("annual_return", lambda: annual_return(v, periods_per_year))
    put("annual_vol", lambda: annual_vol(v, periods_per_year))
    put("skew", lambda: skew(v))
    put("kurtosis", lambda: kurtosis(v))
    put("sharpe", lambda: sharpe_from(out["annual_return"], out["annual_vol"]))
    put("sortino", lambda: sortino(v, periods_per_year))
    put("max_dd", lambda: max_drawdown(v))
    put("worst10_dd", lambda: worst10_dd(v))
    put("ret_over_maxdd", lambda: ratio(out["annual_return"], out["max_dd"], "maxDD"))
    put("ret_over_worst10dd", lambda: ratio(out["annual_return"], out["worst10_dd"], "worst10DD"))
    return StatsTable(periods_per_year=int(periods_per_year), **out)
