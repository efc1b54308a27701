"""Deterministic synthetic scenarios: factor panels, weight paths, NAV tracks, VIX curves.

Random numbers come from :class:`CounterRNG`, a SplitMix64 stream written with
explicit 64-bit integer arithmetic, and Gaussians from Acklam's rational
inverse-normal approximation. Neither depends on numpy's generator
implementations, so a seed reproduces the same fixtures on any platform.

SplitMix64, for reference (all arithmetic mod 2**64)::

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

The stream key for ``(seed, stream)`` is ``mix(seed + (stream + 1) * 0xD1B54A32D192ED03)``
where ``mix`` is the finalizer above; draw ``i`` is ``mix(key + (i + 1) * 0x9E3779B97F4A7C15)``.
Uniforms use the top 53 bits: ``((z >> 11) + 0.5) / 2**53``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .overlays import VixInputs
from .timeseries import (
    AssetPanel,
    NavSeries,
    ReturnSeries,
    Series,
    WeightPath,
    business_days,
    nav_to_returns,
    resample_quarterly,
    write_csv,
)

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
STREAM_MULT = 0xD1B54A32D192ED03
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB

STREAM_PANEL = 1
STREAM_WEIGHTS = 2
STREAM_NOISE = 3
STREAM_VIX = 4


class SpecError(ValueError):
    """Invalid scenario specification."""


def _mix_int(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps mod 2**64
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class CounterRNG:
    """SplitMix64 stream keyed by ``(seed, stream)``."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self.key = _mix_int(self.seed + (self.stream + 1) * STREAM_MULT)
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        i = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix_array(np.uint64(self.key) + i * np.uint64(GOLDEN))

    def uniform(self, n: int) -> np.ndarray:
        """Uniforms strictly inside (0, 1)."""
        return ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53

    def normal(self, n: int) -> np.ndarray:
        return inverse_normal_cdf(self.uniform(n))


# Acklam (2003) coefficients. Measured relative error against a double-precision
# reference peaks near 5.5e-7 at the region boundary p = 0.02425.
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155922803e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _tail(q):
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def inverse_normal_cdf(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    out = np.empty_like(p)
    lo = p < _P_LOW
    hi = p > 1.0 - _P_LOW
    mid = ~(lo | hi)
    q = p[mid] - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    out[mid] = num / den
    out[lo] = _tail(np.sqrt(-2.0 * np.log(p[lo])))
    out[hi] = -_tail(np.sqrt(-2.0 * np.log1p(-p[hi])))
    return out


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StressWindow:
    """Equity crash injected on days ``[start, end)``.

    ``equity_crash_drift`` is added to the daily return of asset 0 *before*
    correlation mixing, so correlated assets inherit a proportional drift.
    ``vix_spike`` is an extra daily log-drift of spot VIX inside the window.
    """

    start: int
    end: int
    equity_crash_drift: float
    vix_spike: float = 0.0


@dataclass(frozen=True)
class VixProfile:
    base_level: float = 15.0
    mean_reversion: float = 0.03
    equity_beta: float = -5.0
    vol_of_vol: float = 0.04
    long_level_ratio: float = 1.3
    front_loading: float = 0.75
    mid_loading: float = 0.3


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    T: int = 2500
    K: int = 4
    asset_names: tuple | None = None
    asset_vols: tuple | None = None
    asset_corr: tuple | None = None
    weight_mode: str = "constant"
    weight_values: tuple | None = None
    weight_step_vol: float = 0.0
    weight_bounds: tuple = (-1.0, 2.0)
    obs_noise_var: float = 1e-4
    start_date: str = "2005-01-03"
    stress_window: StressWindow | None = None
    vix: VixProfile = field(default_factory=VixProfile)

    def __post_init__(self):
        if self.T < 2:
            raise SpecError("T must be >= 2")
        if self.K < 1:
            raise SpecError("K must be >= 1")
        if self.weight_mode not in ("constant", "random_walk"):
            raise SpecError(f"weight_mode must be 'constant' or 'random_walk', got {self.weight_mode!r}")
        if self.obs_noise_var < 0 or self.weight_step_vol < 0:
            raise SpecError("variances and step vols must be >= 0")
        vols = self.vols
        if vols.shape != (self.K,) or np.any(vols < 0):
            raise SpecError(f"asset_vols must be {self.K} non-negative values")
        corr = self.corr
        if corr.shape != (self.K, self.K):
            raise SpecError(f"asset_corr must be {self.K}x{self.K}")
        if not np.allclose(corr, corr.T, atol=1e-12) or not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise SpecError("asset_corr must be symmetric with unit diagonal")
        if np.linalg.eigvalsh(corr).min() < -1e-10:
            raise SpecError("asset_corr is not positive semi-definite")
        if len(self.names) != self.K:
            raise SpecError(f"asset_names must have {self.K} entries")
        if self.weights0.shape != (self.K,):
            raise SpecError(f"weight_values must have {self.K} entries")
        lo, hi = self.weight_bounds
        if lo > hi:
            raise SpecError("weight_bounds require min <= max")
        w = self.stress_window
        if w is not None and not (0 <= w.start < w.end <= self.T):
            raise SpecError("stress_window must satisfy 0 <= start < end <= T")

    @property
    def names(self) -> tuple:
        return tuple(self.asset_names) if self.asset_names else tuple(f"a{k}" for k in range(self.K))

    @property
    def vols(self) -> np.ndarray:
        return np.asarray(self.asset_vols if self.asset_vols is not None else [0.16] * self.K, dtype=float)

    @property
    def corr(self) -> np.ndarray:
        return np.asarray(self.asset_corr if self.asset_corr is not None else np.eye(self.K), dtype=float)

    @property
    def weights0(self) -> np.ndarray:
        if self.weight_values is None:
            return np.full(self.K, 1.0 / self.K)
        return np.asarray(self.weight_values, dtype=float)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["asset_names"] = list(self.names)
        d["asset_vols"] = self.vols.tolist()
        d["asset_corr"] = self.corr.tolist()
        d["weight_values"] = self.weights0.tolist()
        d["weight_bounds"] = list(self.weight_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown scenario keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("asset_names", "asset_vols", "weight_values", "weight_bounds"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        if kw.get("asset_corr") is not None:
            kw["asset_corr"] = tuple(tuple(row) for row in kw["asset_corr"])
        try:
            if kw.get("stress_window") is not None:
                kw["stress_window"] = StressWindow(**kw["stress_window"])
            if kw.get("vix") is not None:
                kw["vix"] = VixProfile(**kw["vix"])
            else:
                kw.pop("vix", None)
            return cls(**kw)
        except TypeError as exc:
            raise SpecError(str(exc)) from None


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def correlation_factor(corr: np.ndarray) -> np.ndarray:
    """Lower-triangular Cholesky factor; eigen-factor when only semi-definite."""
    corr = np.asarray(corr, dtype=float)
    if np.linalg.eigvalsh(corr).min() < -1e-10:
        raise SpecError("correlation matrix is not positive semi-definite")
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(corr)
        return vecs * np.sqrt(np.maximum(vals, 0.0))


def gen_panel(spec: ScenarioSpec) -> AssetPanel:
    """Zero-mean correlated Gaussian daily returns (asset 0 is the equity factor)."""
    T, K = spec.T, spec.K
    daily = spec.vols / math.sqrt(252.0)
    L = correlation_factor(spec.corr)
    z = CounterRNG(spec.seed, STREAM_PANEL).normal(T * K).reshape(T, K)
    w = spec.stress_window
    if w is not None and daily[0] > 0:
        z[w.start:w.end, 0] += w.equity_crash_drift / daily[0]
    r = (z @ L.T) * daily
    if np.any(r <= -1.0):
        raise SpecError("generated return <= -100%; lower the vols or drift")
    return AssetPanel(business_days(spec.start_date, T), spec.names, r)


def gen_weight_path(spec: ScenarioSpec, index=None) -> WeightPath:
    T, K = spec.T, spec.K
    dates = index if index is not None else business_days(spec.start_date, T)
    w0 = spec.weights0
    if spec.weight_mode == "constant" or spec.weight_step_vol == 0.0:
        return WeightPath(dates, spec.names, np.tile(w0, (T, 1)))
    lo, hi = spec.weight_bounds
    steps = spec.weight_step_vol * CounterRNG(spec.seed, STREAM_WEIGHTS).normal(T * K).reshape(T, K)
    W = np.empty((T, K))
    w = np.clip(w0, lo, hi)
    W[0] = w
    for t in range(1, T):
        w = np.clip(w + steps[t], lo, hi)
        W[t] = w
    return WeightPath(dates, spec.names, W)


def gen_nav(weights: WeightPath, panel: AssetPanel, obs_noise_var: float, seed: int = 0,
            base: float = 100.0) -> NavSeries:
    """Forward NAV: ``NAV_t = NAV_{t-1} (1 + w_{t-1} . r_t + eps_t)`` with ``NAV_0 = base``."""
    W, R = weights.weights, panel.returns
    if W.shape != R.shape:
        raise SpecError(f"weights {W.shape} and panel {R.shape} shapes differ")
    step = np.einsum("tk,tk->t", W[:-1], R[1:])
    if obs_noise_var > 0:
        step = step + math.sqrt(obs_noise_var) * CounterRNG(seed, STREAM_NOISE).normal(step.size)
    if np.any(step <= -1.0):
        raise SpecError("generated NAV step return <= -100%")
    levels = base * np.concatenate(([1.0], np.cumprod(1.0 + step)))
    return NavSeries(panel.index, levels, "proxy")


def gen_vix(spec: ScenarioSpec, panel: AssetPanel) -> VixInputs:
    """Spot VIX as a mean-reverting log process driven by equity (asset 0) returns.

    The curve is a one-factor term structure around a long-run level: contango
    in calm markets, backwardation when spot spikes above the long-run level.
    Futures returns are constant-maturity level returns less the roll-down
    toward spot.
    """
    p = spec.vix
    T = len(panel)
    eq = panel.returns[:, 0]
    z = CounterRNG(spec.seed, STREAM_VIX).normal(T)
    spike = np.zeros(T)
    w = spec.stress_window
    if w is not None:
        spike[w.start:w.end] = w.vix_spike
    log_base = math.log(p.base_level)
    x = np.empty(T)
    x[0] = log_base
    for t in range(1, T):
        x[t] = (x[t - 1] + p.mean_reversion * (log_base - x[t - 1])
                + p.equity_beta * eq[t] + p.vol_of_vol * z[t] + spike[t])
    spot = np.exp(x)
    long_level = p.long_level_ratio * p.base_level
    front = long_level + (spot - long_level) * p.front_loading
    mid = long_level + (spot - long_level) * p.mid_loading
    st = np.zeros(T)
    mt = np.zeros(T)
    st[1:] = front[1:] / front[:-1] - 1.0 - (front[:-1] / spot[:-1] - 1.0) / 21.0
    mt[1:] = mid[1:] / mid[:-1] - 1.0 - (mid[:-1] / spot[:-1] - 1.0) / 105.0
    idx = panel.index
    return VixInputs(Series(idx, spot, "spot"), Series(idx, front, "front"), Series(idx, mid, "mid"),
                     ReturnSeries(idx, st, "st_ret"), ReturnSeries(idx, mt, "mt_ret"))


@dataclass(frozen=True, eq=False)
class Scenario:
    spec: ScenarioSpec
    panel: AssetPanel
    weights: WeightPath
    nav: NavSeries
    vix: VixInputs

    def write(self, out_dir) -> dict:
        """Write ``panel.csv``, ``nav.csv``, ``weights.csv``, ``vix.csv`` and ``truth.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        d = self.panel.dates
        write_csv(out / "panel.csv", d, {n: self.panel.returns[:, k] for k, n in enumerate(self.panel.asset_names)})
        write_csv(out / "nav.csv", d, {"proxy": self.nav.values})
        write_csv(out / "weights.csv", d, {n: self.weights.weights[:, k] for k, n in enumerate(self.weights.asset_names)})
        write_csv(out / "vix.csv", d, {
            "spot": self.vix.spot_vix.values, "front": self.vix.front_future.values,
            "mid": self.vix.mid_future.values, "st_ret": self.vix.st_future_returns.values,
            "mt_ret": self.vix.mt_future_returns.values,
        })
        truth = {"spec": self.spec.to_dict(), "files": ["panel.csv", "nav.csv", "weights.csv", "vix.csv"]}
        (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return truth


def generate(spec: ScenarioSpec) -> Scenario:
    panel = gen_panel(spec)
    weights = gen_weight_path(spec, panel.index)
    nav = gen_nav(weights, panel, spec.obs_noise_var, spec.seed)
    return Scenario(spec, panel, weights, nav, gen_vix(spec, panel))


# ---------------------------------------------------------------------------
# Preset scenarios used by the tests and the bundled fixture
# ---------------------------------------------------------------------------

FACTOR_NAMES = ("equity", "fx", "rates", "commodity")


def decoder_spec(seed: int, T: int = 2500, weight_mode: str = "constant",
                 weight_values: Sequence[float] = (0.6, 0.4, 0.3, 0.2), step_vol: float = 0.0,
                 obs_noise_var: float = 1e-4) -> ScenarioSpec:
    """Four factors at 16% vol with mild cross-correlation."""
    corr = ((1.0, 0.2, -0.2, 0.3),
            (0.2, 1.0, 0.0, 0.1),
            (-0.2, 0.0, 1.0, -0.1),
            (0.3, 0.1, -0.1, 1.0))
    return ScenarioSpec(seed=seed, T=T, K=4, asset_names=FACTOR_NAMES, asset_vols=(0.16,) * 4,
                        asset_corr=corr, weight_mode=weight_mode, weight_values=tuple(weight_values),
                        weight_step_vol=step_vol, obs_noise_var=obs_noise_var)


def stress_spec(seed: int, T: int = 750) -> ScenarioSpec:
    """Calm market with a sharp 2020-style equity crash and VIX spike on days 450-480."""
    return ScenarioSpec(seed=seed, T=T, K=4, asset_names=FACTOR_NAMES,
                        asset_vols=(0.16, 0.08, 0.06, 0.20),
                        asset_corr=((1.0, 0.1, -0.3, 0.3),
                                    (0.1, 1.0, 0.0, 0.1),
                                    (-0.3, 0.0, 1.0, -0.1),
                                    (0.3, 0.1, -0.1, 1.0)),
                        weight_values=(0.8, 0.1, 0.2, 0.1),
                        stress_window=StressWindow(450, 480, -0.015, 0.02))


def riskoff_spec(seed: int, T: int = 1000) -> ScenarioSpec:
    """Prolonged equity bear market (days 300-550) with bonds as a strong safe haven.

    The crash drift enters the equity shock before mixing, so the -0.7
    equity/bond correlation turns it into a steady bond rally.
    """
    return ScenarioSpec(seed=seed, T=T, K=4, asset_names=("equity", "bonds", "fx", "commodity"),
                        asset_vols=(0.16, 0.07, 0.08, 0.18),
                        asset_corr=((1.0, -0.7, -0.3, 0.3),
                                    (-0.7, 1.0, 0.2, -0.1),
                                    (-0.3, 0.2, 1.0, 0.0),
                                    (0.3, -0.1, 0.0, 1.0)),
                        weight_values=(0.8, 0.2, 0.0, 0.1),
                        stress_window=StressWindow(300, 550, -0.004, 0.0))


def fixture_spec(seed: int = 7) -> ScenarioSpec:
    """Six years of drifting weights over the four factors, with a crash in year four."""
    base = decoder_spec(seed, T=1500, weight_mode="random_walk", weight_values=(0.7, 0.2, 0.3, 0.1),
                        step_vol=5e-4, obs_noise_var=2.5e-6)
    d = base.to_dict()
    d["stress_window"] = {"start": 820, "end": 850, "equity_crash_drift": -0.012, "vix_spike": 0.02}
    return ScenarioSpec.from_dict(d)


FIXTURE_CONFIG = {
    "data": {"proxy": "nav.csv", "panel": "panel.csv", "vix": "vix.csv",
             "benchmarks": {"pe_smoothed": "benchmark_pe.csv"}},
    "backtest": {"train_start": "2005-01-03", "train_end": "2007-12-31", "test_start": "2008-01-01",
                 "refit": "never", "leverage_cap": 3.0, "jump_cap": 0.25, "bounds": {"min": -1.0, "max": 2.0}},
    "asymmetry": {"af": 0.9, "application_point": "on_output"},
    "overlay": {"tailrisk": {"overlay_weight": 0.1}, "momentum": {"equity_asset": "equity", "scale": 0.25}},
    "out": "report",
}


def write_fixture(out_dir, seed: int = 7) -> Path:
    """Scenario files, a smoothed quarterly PE-style benchmark and ``config.json``."""
    out = Path(out_dir)
    sc = generate(fixture_spec(seed))
    sc.write(out)
    q = resample_quarterly(nav_to_returns(sc.nav))
    smooth = q.values.copy()
    smooth[1:] = 0.6 * q.values[1:] + 0.4 * q.values[:-1]
    write_csv(out / "benchmark_pe.csv", q.dates, {"pe_smoothed": smooth})
    (out / "config.json").write_text(json.dumps(FIXTURE_CONFIG, indent=2) + "\n", encoding="utf-8")
    return out
