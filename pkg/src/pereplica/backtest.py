"""Walk-forward replication backtest.

Pipeline: fit noise parameters on the training window, filter from the start
of training through the end of data (so the state is burned in by the test
start), keep the test-period replication ``w_{t-1} . r_t``, apply the
asymmetry transform and overlays, check the weight path and compute the
statistics and trailing benchmark correlations.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import stats
from .asymmetry import AsymmetryConfig, apply_asymmetry, asymmetric_values
from .decoder import (
    DecodeResult,
    FitConfig,
    SanityReport,
    StateSpaceModel,
    WeightBounds,
    enforce_leverage,
    filter_returns,
    fit_mle_returns,
    sanity_check_weights,
)
from .overlays import (
    MomentumConfig,
    TailRiskConfig,
    VixInputs,
    apply_overlay,
    riskoff_momentum,
    tail_risk_allocation,
)
from .timeseries import (
    AssetPanel,
    DataError,
    NavSeries,
    ReturnSeries,
    WeightPath,
    align_inner,
    nav_to_returns,
    quarter_keys,
    resample_quarterly,
    write_csv,
)

log = logging.getLogger(__name__)

HORIZONS = ("1Y", "3Y", "5Y", "7Y", "10Y", "lifetime")
_HORIZON_QUARTERS = {"1Y": 4, "3Y": 12, "5Y": 20, "7Y": 28, "10Y": 40}
MIN_QUARTERS = 4


class BacktestError(RuntimeError):
    """A pipeline stage produced unusable output."""


@dataclass(frozen=True)
class BacktestConfig:
    train_start: str
    train_end: str
    test_start: str
    refit: str = "never"
    asymmetry: AsymmetryConfig = AsymmetryConfig()
    tailrisk: TailRiskConfig | None = None
    momentum: MomentumConfig | None = None
    bounds: WeightBounds | None = None
    leverage_cap: float = 3.0
    jump_cap: float | None = 0.25
    fit: FitConfig = FitConfig()

    def __post_init__(self):
        a, b, c = (np.datetime64(x, "D") for x in (self.train_start, self.train_end, self.test_start))
        if not (a < b <= c):
            raise ValueError("dates must satisfy train_start < train_end <= test_start")
        if self.refit not in ("never", "annual"):
            raise ValueError(f"refit must be 'never' or 'annual', got {self.refit!r}")
        if not self.leverage_cap > 0:
            raise ValueError("leverage_cap must be > 0")

    def echo(self) -> dict:
        return {
            "train_start": str(self.train_start), "train_end": str(self.train_end),
            "test_start": str(self.test_start), "refit": self.refit,
            "asymmetry": {"af": self.asymmetry.af, "application_point": self.asymmetry.application_point},
            "tailrisk": None if self.tailrisk is None else vars(self.tailrisk),
            "momentum": None if self.momentum is None else {
                **{k: v for k, v in vars(self.momentum).items() if k != "hysteresis"},
                "cross_assets": None if self.momentum.cross_assets is None else list(self.momentum.cross_assets),
                "hysteresis": vars(self.momentum.hysteresis)},
            "bounds": None if self.bounds is None else self.bounds.to_dict(),
            "leverage_cap": self.leverage_cap, "jump_cap": self.jump_cap,
        }


# ---------------------------------------------------------------------------
# Trailing correlations
# ---------------------------------------------------------------------------

@dataclass
class CorrelationTable:
    benchmark: str
    rows: dict = field(default_factory=dict)      # horizon -> (correlation, n_quarters)
    omitted: dict = field(default_factory=dict)   # horizon -> reason

    def get(self, horizon: str) -> float:
        return self.rows[horizon][0]


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    da, db = a - a.mean(), b - b.mean()
    den = math.sqrt(float(da @ da) * float(db @ db))
    return float(da @ db) / den if den > 0 else math.nan


def trailing_correlation_table(strategy_q: ReturnSeries, benchmark_q: ReturnSeries,
                               horizons=HORIZONS, benchmark: str | None = None) -> CorrelationTable:
    """Pearson correlation of quarterly returns over trailing windows.

    Quarters are matched by calendar quarter, not exact stamp. Each window
    ends at the last common quarter; a horizon with fewer than its full
    length of common quarters (``lifetime``: fewer than 4) is omitted.
    """
    name = benchmark or benchmark_q.name or "benchmark"
    qa, qb = quarter_keys(strategy_q.dates), quarter_keys(benchmark_q.dates)
    if np.unique(qa).size != qa.size or np.unique(qb).size != qb.size:
        raise DataError("correlation inputs must be quarterly (one point per calendar quarter)")
    common, ia, ib = np.intersect1d(qa, qb, return_indices=True)
    a, b = strategy_q.values[ia], benchmark_q.values[ib]
    table = CorrelationTable(name)
    n = common.size
    for h in horizons:
        need = MIN_QUARTERS if h == "lifetime" else _HORIZON_QUARTERS.get(h)
        if need is None:
            raise ValueError(f"unknown horizon {h!r}")
        if n < need:
            table.omitted[h] = f"only {n} common quarters, need {need}"
            continue
        k = n if h == "lifetime" else need
        c = _pearson(a[-k:], b[-k:])
        if math.isnan(c):
            table.omitted[h] = "zero variance in window"
            continue
        table.rows[h] = (c, k)
    return table


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class BacktestReport:
    replication: ReturnSeries
    decoded: ReturnSeries
    weights: WeightPath
    sanity: SanityReport
    stats: stats.StatsTable
    correlations: list
    model: StateSpaceModel
    overlays: dict
    config: BacktestConfig
    proxy: ReturnSeries
    decode: DecodeResult

    def summary(self) -> dict:
        return {
            "period": {"start": str(self.replication.dates[0]), "end": str(self.replication.dates[-1]),
                       "days": len(self.replication)},
            "stats": self.stats.as_dict(),
            "correlations": {
                t.benchmark: {"rows": {h: {"correlation": c, "quarters": n} for h, (c, n) in t.rows.items()},
                              "omitted": t.omitted}
                for t in self.correlations},
            "model": self.model.to_dict(),
            "sanity": self.sanity.summary(),
            "config": self.config.echo(),
            "filter_log_likelihood": self.decode.log_likelihood,
        }

    def write(self, out_dir) -> Path:
        """Emit ``replication.csv``, ``weights.csv``, ``stats.csv``, ``correlations.csv`` and ``report.json``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        cols = {"replication": self.replication.values, "decoded": self.decoded.values,
                "proxy": self.proxy.values}
        for name, s in self.overlays.items():
            cols[name] = s.values
        write_csv(out / "replication.csv", self.replication.dates, cols)
        write_csv(out / "weights.csv", self.weights.dates,
                  {n: self.weights.weights[:, k] for k, n in enumerate(self.weights.asset_names)})
        self.stats.to_csv(out / "stats.csv")
        with (out / "correlations.csv").open("w", encoding="utf-8") as fh:
            fh.write("benchmark,horizon,correlation,quarters\n")
            for t in self.correlations:
                for h, (c, n) in t.rows.items():
                    fh.write(f"{t.benchmark},{h},{c:.6g},{n}\n")
        (out / "report.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
        return out


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def _require_finite(values, stage: str):
    if not np.all(np.isfinite(values)):
        raise BacktestError(f"non-finite values after stage '{stage}'")


def _overlaid(base: ReturnSeries, overlay: ReturnSeries, scale: float, stage: str) -> ReturnSeries:
    _require_finite(base.values + scale * overlay.values, stage)
    return apply_overlay(base, overlay, scale)


def resolve_fit_config(cfg: BacktestConfig, n_assets: int) -> FitConfig:
    fc = cfg.fit
    if cfg.bounds is not None:
        if len(cfg.bounds) != n_assets:
            raise DataError(f"bounds cover {len(cfg.bounds)} assets, panel has {n_assets}")
        fc = FitConfig(**{**vars(fc), "bounds": cfg.bounds})
    return fc


def _segments(dates: np.ndarray, test_start, refit: str):
    """Test-period slices that share one fitted model."""
    test = np.flatnonzero(dates >= np.datetime64(test_start, "D"))
    if test.size == 0:
        raise DataError(f"no data on or after test_start {test_start}")
    if refit == "never":
        return [(test[0], test[-1] + 1)]
    years = dates[test].astype("datetime64[Y]")
    cuts = np.flatnonzero(np.r_[True, years[1:] != years[:-1]])
    ends = np.r_[cuts[1:], test.size]
    return [(test[c], test[e - 1] + 1) for c, e in zip(cuts, ends)]


def decode_walk_forward(target: ReturnSeries, panel: AssetPanel, cfg: BacktestConfig):
    """Fit/filter per refit segment; returns (test DecodeResult rows, last model, full decode)."""
    fc = resolve_fit_config(cfg, panel.n_assets)
    dates = target.dates
    train = target.index.mask_between(cfg.train_start, cfg.train_end)
    if train.sum() < 10 * panel.n_assets:
        raise DataError(f"insufficient training data: {int(train.sum())} observations in "
                        f"[{cfg.train_start}, {cfg.train_end}], need {10 * panel.n_assets}")
    model = fit_mle_returns(target.take(train), panel.take(train), fc)
    segs = _segments(dates, cfg.test_start, cfg.refit)
    parts = []
    last = None
    for i, (a, b) in enumerate(segs):
        if i > 0:
            # expanding window refit on data strictly before the segment
            hist = slice(0, a)
            model = fit_mle_returns(target.take(hist), panel.take(hist), fc)
        res = filter_returns(model, target.take(slice(0, b)), panel.take(slice(0, b)))
        parts.append((a, b, res))
        last = res
    return parts, model, last


def run_backtest(proxy_nav: NavSeries, panel: AssetPanel, benchmarks=None, cfg: BacktestConfig | None = None,
                 vix: VixInputs | None = None) -> BacktestReport:
    """Run the full replication pipeline. ``benchmarks`` maps names to quarterly return series."""
    if cfg is None:
        raise ValueError("a BacktestConfig is required")
    benchmarks = dict(benchmarks or {})
    panel, proxy_nav = align_inner(panel, proxy_nav)
    start = np.datetime64(cfg.train_start, "D")
    keep = proxy_nav.dates >= start
    # keep the last level before train_start as the return anchor when present
    first = max(int(np.argmax(keep)) - 1, 0) if keep.any() else None
    if first is None:
        raise DataError("no data on or after train_start")
    nav = proxy_nav.take(slice(first, None))
    panel = panel.take(slice(first, None))
    proxy = nav_to_returns(nav)
    rpanel = panel.take(slice(1, None))

    target = proxy
    if cfg.asymmetry.application_point == "on_target":
        target = apply_asymmetry(proxy, cfg.asymmetry)

    parts, model, full = decode_walk_forward(target, rpanel, cfg)
    a0 = parts[0][0]
    test_idx = rpanel.index[a0:]
    W = np.vstack([res.weights.weights[a:b] for a, b, res in parts])
    # weights in force during each test day: posterior of the previous day
    held = np.vstack([
        (res.weights.weights[a - 1:b - 1] if a > 0 else
         np.vstack([res.init_mean[None, :], res.weights.weights[:b - 1]]))
        for a, b, res in parts])
    decoded_vals = np.concatenate([res.replicated_returns.values[a:b] for a, b, res in parts])
    _require_finite(decoded_vals, "decode")

    W_enf, _ = enforce_leverage(W, cfg.leverage_cap)
    _, held_scale = enforce_leverage(held, cfg.leverage_cap)
    decoded = ReturnSeries(test_idx, decoded_vals, "decoded")
    repl_vals = decoded_vals * held_scale
    weights = WeightPath(test_idx, rpanel.asset_names, W_enf)

    if cfg.asymmetry.application_point == "on_output":
        repl_vals = asymmetric_values(repl_vals, cfg.asymmetry.af)
    _require_finite(repl_vals, "asymmetry")
    replication = ReturnSeries(test_idx, repl_vals, "replication")

    overlays = {}
    test_mask = rpanel.index.mask_between(cfg.test_start, None)
    if cfg.tailrisk is not None:
        if vix is None:
            raise DataError("tail-risk overlay configured but no VIX inputs supplied")
        v = _align_vix(vix, rpanel)
        tr = tail_risk_allocation(v, cfg.tailrisk)
        ov = tr.overlay.take(np.isin(tr.overlay.dates, test_idx.dates))
        if not np.array_equal(ov.dates, test_idx.dates):
            raise DataError("VIX inputs do not cover every test day")
        overlays["tailrisk"] = ov
        replication = _overlaid(replication, ov, cfg.tailrisk.scale, "tailrisk overlay")
    if cfg.momentum is not None:
        mom = riskoff_momentum(rpanel, cfg.momentum)
        ov = mom.overlay.take(test_mask)
        overlays["momentum"] = ov
        replication = _overlaid(replication, ov, cfg.momentum.scale, "momentum overlay")

    bounds = cfg.bounds or resolve_fit_config(cfg, rpanel.n_assets).resolved_bounds(rpanel.n_assets)
    sanity = sanity_check_weights(weights, bounds, cfg.leverage_cap, cfg.jump_cap)

    try:
        table = stats.full_table(replication, stats.DAILY)
    except stats.StatsError as exc:
        raise BacktestError(f"stage 'stats': {exc}") from None

    repl_q = resample_quarterly(replication)
    proxy_test = proxy.take(test_mask)
    corr = [trailing_correlation_table(repl_q, resample_quarterly(proxy_test), benchmark="proxy")]
    for name in sorted(benchmarks):
        corr.append(trailing_correlation_table(repl_q, benchmarks[name], benchmark=name))
    for t in corr:
        for h, why in t.omitted.items():
            log.info("correlation vs %s: horizon %s omitted (%s)", t.benchmark, h, why)

    return BacktestReport(replication, decoded, weights, sanity, table, corr, model, overlays, cfg,
                          proxy_test, full)


def _align_vix(vix: VixInputs, panel: AssetPanel) -> VixInputs:
    keep = np.isin(vix.dates, panel.dates)
    v = vix.take(keep)
    if len(v) == 0:
        raise DataError("VIX inputs share no dates with the panel")
    return v
