import math

import numpy as np
import pytest
from scipy.optimize import brentq

from pereplica import stats, synth
from pereplica.overlays import (
    HysteresisConfig,
    MomentumConfig,
    TailRiskConfig,
    VixInputs,
    apply_overlay,
    curve_ratio,
    equity_trend,
    hysteresis_filter,
    level_zscore,
    riskoff_momentum,
    riskoff_momentum_allocation,
    tail_risk_allocation,
    threshold_rule,
    vol_adjusted_return,
)
from pereplica.timeseries import DataError, ReturnSeries, Series, business_days

from conftest import panel, rs


def lv(values, start="2020-01-01"):
    v = np.asarray(values, float)
    return Series(business_days(start, v.size), v)


# ---------------------------------------------------------------- signals

def test_vol_adjusted_return_constant_is_flagged_zero():
    s = vol_adjusted_return(lv(np.full(30, 20.0)), 20)
    assert np.all(np.isnan(s.values[:20]))
    assert np.all(s.values[20:] == 0.0) and np.all(s.degenerate[20:])


def test_vol_adjusted_return_rising_positive():
    s = vol_adjusted_return(lv(20 * 1.01 ** np.arange(40) * (1 + 0.001 * np.sin(np.arange(40)))), 20)
    assert np.all(s.values[20:] > 0)


def test_vol_adjusted_return_recompute():
    levels = 20 + np.random.default_rng(0).normal(0, 1, 21).cumsum() * 0.3
    s = vol_adjusted_return(lv(levels), 20)
    daily = [levels[i] / levels[i - 1] - 1 for i in range(1, 21)]
    mean = sum(daily) / 20
    sd = math.sqrt(sum((d - mean) ** 2 for d in daily) / 19)
    assert math.isclose(s.values[20], (levels[20] / levels[0] - 1) / sd, rel_tol=1e-10)
    with pytest.raises(DataError):
        vol_adjusted_return(lv(levels[:20]), 20)


def test_curve_ratio():
    assert curve_ratio(lv([20.0]), lv([16.0])).values[0] == 1.25
    assert curve_ratio(lv([16.0]), lv([16.0])).values[0] == 1.0
    assert curve_ratio(lv([18.0]), lv([24.0])).values[0] == 0.75


def test_level_zscore_constant_flagged():
    z = level_zscore(lv(np.full(30, 15.0)), 20)
    assert np.all(np.isnan(z.values[:19])) and np.all(z.values[19:] == 0.0) and np.all(z.degenerate[19:])


def test_level_zscore_two_sigma_point():
    base = 15 + np.random.default_rng(1).normal(0, 1, 19)

    def gap(x):
        w = np.r_[base, x]
        return (x - w.mean()) / w.std(ddof=1) - 2.0
    x = brentq(gap, 15.0, 40.0, xtol=1e-14)
    z = level_zscore(lv(np.r_[base, x]), 20)
    assert abs(z.values[-1] - 2.0) < 1e-10


def test_level_zscore_recompute():
    v = 15 + np.random.default_rng(2).normal(0, 1, 300).cumsum() * 0.2
    z = level_zscore(lv(v), 252)
    for t in (251, 270, 299):
        w = v[t - 251:t + 1]
        assert abs(z.values[t] - (v[t] - w.mean()) / w.std(ddof=1)) < 1e-10


def test_equity_trend():
    assert np.all(equity_trend(rs(np.full(70, 0.01) + np.linspace(0, 1e-4, 70)), 60).values[59:] > 0)
    z = equity_trend(rs(np.tile([0.01, -0.01], 40)), 60)
    assert abs(z.values[59]) < 1e-12
    r = np.random.default_rng(3).normal(0, 0.01, 100)
    t = equity_trend(rs(r), 60)
    w = r[40:100]
    assert abs(t.values[99] - w.mean() / w.std(ddof=1) * math.sqrt(60)) < 1e-10
    assert np.all(np.isnan(t.values[:59]))
    flat = equity_trend(rs(np.zeros(60)), 60)
    assert flat.values[59] == 0.0 and flat.degenerate[59]


# ---------------------------------------------------------------- tail risk

def _vix(spot, front, mid=None, st=None, mt=None):
    n = len(spot)
    d = business_days("2020-01-01", n)
    mid = front if mid is None else mid
    st = np.zeros(n) if st is None else st
    mt = np.zeros(n) if mt is None else mt
    return VixInputs(Series(d, spot), Series(d, front), Series(d, mid), ReturnSeries(d, st), ReturnSeries(d, mt))


def test_calm_fixture_no_allocation():
    v = _vix(np.full(300, 15.0), np.full(300, 16.5), st=np.full(300, 0.01), mt=np.full(300, 0.01))
    res = tail_risk_allocation(v)
    assert np.all(res.allocation == 0) and np.all(res.overlay.values == 0)


def _stress_fixture():
    n = 260
    spot = np.full(n, 15.0) + 0.01 * np.sin(np.arange(n))
    front = np.full(n, 16.5) + 0.01 * np.cos(np.arange(n))
    # three days of spiking spot and rising front, in backwardation
    spot[-3:] = [25.0, 28.0, 30.0]
    front[-3:] = [22.0, 24.0, 26.0]
    st = np.zeros(n)
    st[-1] = 0.2
    return _vix(spot, front, st=st, mt=st / 2)


def test_stress_fixture_allocates_next_day():
    res = tail_risk_allocation(_stress_fixture())
    assert res.stress[-3:].all() and not res.stress[:-3].any()
    assert res.allocation[-2].tolist() == [0.05, 0.05]
    assert res.allocation[-3].tolist() == [0.0, 0.0]
    assert math.isclose(res.overlay.values[-1], 0.05 * 0.2 + 0.05 * 0.1)


def test_and_semantics():
    v = _stress_fixture()
    for kill in ("var", "ratio", "z"):
        def comb(a, b, c, cfg, kill=kill):
            a = np.where(kill == "var", -1.0, a)
            b = np.where(kill == "ratio", 2.0, b)
            c = np.where(kill == "z", 0.0, c)
            return threshold_rule(a, b, c, cfg)
        assert not tail_risk_allocation(v, combiner=comb).stress.any()


def test_custom_combiner_and_split():
    v = _stress_fixture()
    res = tail_risk_allocation(v, TailRiskConfig(st_mt_split=1.0, overlay_weight=0.2),
                               combiner=lambda a, b, c, cfg: np.ones(a.size, bool))
    assert res.allocation[0].tolist() == [0.0, 0.0]
    assert np.all(res.allocation[1:] == [0.2, 0.0])


def test_tail_risk_needs_warmup():
    with pytest.raises(DataError, match="at least 252"):
        tail_risk_allocation(_vix(np.full(100, 15.0), np.full(100, 16.0)))


def test_tail_overlay_reduces_drawdown_on_stress_scenario():
    sc = synth.generate(synth.stress_spec(0))
    tr = tail_risk_allocation(sc.vix)
    eq = sc.panel.column("equity")
    both = apply_overlay(eq, tr.overlay, 1.0)
    assert stats.max_drawdown(both.values) < stats.max_drawdown(eq.values)


# ---------------------------------------------------------------- hysteresis

def _reference(trend, enter, exit_, confirm):
    state, below, above, out = 0, 0, 0, []
    for x in trend:
        below = below + 1 if x < enter else 0
        above = above + 1 if x > exit_ else 0
        if state == 0 and below >= confirm:
            state = 1
        elif state == 1 and above >= confirm:
            state = 0
        out.append(state)
    return out


def test_hysteresis_always_above():
    assert not hysteresis_filter(np.full(50, 1.0)).any()


def test_hysteresis_confirmation_not_met():
    cfg = HysteresisConfig(confirm_days=5)
    x = np.r_[np.full(4, -2.0), np.full(20, 1.0)]
    assert not hysteresis_filter(x, cfg).any()


def test_hysteresis_hand_path():
    cfg = HysteresisConfig(enter_thresh=-1.0, exit_thresh=0.0, confirm_days=3)
    x = [0.5, -0.5, -1.5, -1.5, -0.5, -1.5, -1.5, -1.5, -1.2, -0.5,   # down: ON at index 7
         -0.5, -0.2, -0.8, 0.5, 0.5, -0.1, 0.2, 0.3, -0.3, -0.5,      # band and a failed exit
         0.1, 0.2, 0.4, 0.4, -2.0, -2.0, 0.1, 0.1, 0.1, 0.1]          # exit at 22, no re-entry
    expected = [0] * 7 + [1] * 15 + [0] * 8
    assert hysteresis_filter(np.array(x), cfg).tolist() == expected
    assert _reference(x, -1.0, 0.0, 3) == expected


def test_hysteresis_band_property():
    rng = np.random.default_rng(4)
    x = np.r_[np.full(5, -2.0), rng.uniform(-0.99, -0.01, 200)]
    out = hysteresis_filter(x, HysteresisConfig(confirm_days=5))
    assert np.all(out[4:] == 1)


def test_hysteresis_nan_breaks_runs():
    x = np.array([-2, -2, np.nan, -2, -2, -2.0])
    assert hysteresis_filter(x, HysteresisConfig(confirm_days=3)).tolist() == [0, 0, 0, 0, 0, 1]


# ---------------------------------------------------------------- momentum

def test_momentum_all_off_is_zero():
    pn = panel(np.random.default_rng(5).normal(0, 0.01, (200, 3)))
    res = riskoff_momentum_allocation(np.zeros(200), pn)
    assert np.all(res.weights == 0) and np.all(res.overlay.values == 0)


def test_momentum_single_qualifying_asset():
    rng = np.random.default_rng(6)
    R = rng.normal(0, 0.005, (120, 2))
    R[:, 0] += 0.002   # trends up
    R[:, 1] -= 0.003   # trends down
    res = riskoff_momentum_allocation(np.ones(120), panel(R), 60, 60, 0.10)
    w = res.weights
    assert np.all(w[61:, 1] == 0) and np.all(w[61:, 0] > 0)
    t = 100
    sd = R[t - 60:t, 0].std(ddof=1)
    assert math.isclose(w[t, 0] * sd * math.sqrt(252), 0.10, rel_tol=1e-12)
    assert np.all(w[:60] == 0)


def test_momentum_vol_target():
    rng = np.random.default_rng(7)
    R = rng.normal(0.001, 0.01, (150, 3))
    res = riskoff_momentum_allocation(np.ones(150), panel(R), 60, 60, 0.10)
    t = 120
    w = res.weights[t + 1]
    pick = w > 0
    cov = np.atleast_2d(np.cov(R[t - 59:t + 1][:, pick], rowvar=False))
    assert math.isclose(math.sqrt(w[pick] @ cov @ w[pick] * 252), 0.10, rel_tol=1e-10)


def test_momentum_overlay_uses_previous_weights():
    sc = synth.generate(synth.riskoff_spec(0))
    res = riskoff_momentum(sc.panel, MomentumConfig(equity_asset="equity"))
    cross = sc.panel.select(("bonds", "fx", "commodity")).returns
    assert np.allclose(res.overlay.values, (res.weights * cross).sum(axis=1))
    assert res.regime.any()


def test_bonds_rally_months():
    down = positive = 0
    for seed in range(50):
        sc = synth.generate(synth.riskoff_spec(seed))
        res = riskoff_momentum(sc.panel, MomentumConfig(equity_asset="equity"))
        w = sc.spec.stress_window
        months = sc.panel.dates.astype("datetime64[M]")
        idx = np.arange(len(months))
        eq = sc.panel.returns[:, 0]
        for m in np.unique(months):
            s = months == m
            if idx[s].min() < w.start or idx[s].max() >= w.end:
                continue
            if np.prod(1 + eq[s]) < 1:
                down += 1
                positive += np.prod(1 + res.overlay.values[s]) > 1
    assert positive / down > 0.80, (positive, down)


# ---------------------------------------------------------------- combination

def test_apply_overlay():
    b = rs([0.01, 0.02])
    o = rs([-0.005, 0.01])
    assert np.array_equal(apply_overlay(b, o, 0.0).values, b.values)
    assert math.isclose(apply_overlay(b, o, 1.0).values[0], 0.005)
    d2 = apply_overlay(b, o, 0.6).values - b.values
    d1 = apply_overlay(b, o, 0.3).values - b.values
    assert np.allclose(d2, 2 * d1, rtol=1e-14)
    with pytest.raises(DataError):
        apply_overlay(b, rs([0.0, 0.0], start="2021-01-01"), 1.0)
