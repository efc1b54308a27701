import json
import math

import numpy as np
import pytest

from pereplica import synth
from pereplica.decoder import (
    FitConfig,
    FitError,
    ModelError,
    StateSpaceModel,
    WeightBounds,
    enforce_leverage,
    filter,
    filter_returns,
    fit_mle,
    log_likelihood,
    predict_step,
    project_bounds,
    psd_repair,
    sanity_check_weights,
    update_step,
)
from pereplica.timeseries import DataError, NavSeries, WeightPath, business_days

from conftest import panel, rs


def model(K, q=0.0, s2=1e-4, w0=None, p0=0.25, lo=-1.0, hi=2.0):
    b = WeightBounds.uniform(K, lo, hi)
    w0 = b.midpoint if w0 is None else np.asarray(w0, float)
    return StateSpaceModel(np.eye(K) * q, s2, w0, np.eye(K) * p0, b)


# ---------------------------------------------------------------- single steps

def test_predict_step():
    m, P = predict_step([0.5], [[0.01]], [[0.0]])
    assert m.tolist() == [0.5] and P.tolist() == [[0.01]]
    _, P = predict_step([0.5], [[0.01]], [[0.02]])
    assert math.isclose(P[0, 0], 0.03)
    Q = np.array([[1e-4, 3e-5], [3e-5, 2e-4]])
    _, P = predict_step([0, 0], np.eye(2) * 0.1, Q)
    assert P[0, 1] == 3e-5 and P[1, 0] == 3e-5


def test_update_textbook():
    m, P = update_step([0.0], [[1.0]], 1.0, [1.0], 1.0)
    assert m.tolist() == [0.5] and P.tolist() == [[0.5]]


def test_update_uninformative():
    m0 = np.array([0.3, 0.7])
    P0 = np.array([[0.2, 0.05], [0.05, 0.1]])
    m, P = update_step(m0, P0, 0.05, [0.01, -0.02], 1e12)
    assert np.allclose(m, m0, atol=1e-6) and np.allclose(P, P0, atol=1e-6)


def test_update_degenerate():
    with pytest.raises(ModelError, match="degenerate observation"):
        update_step([0.0], [[0.0]], 1.0, [1.0], 0.0)


def test_update_matches_quadrature():
    m0 = np.array([0.4, 0.6])
    P0 = np.array([[0.09, 0.02], [0.02, 0.04]])
    r = np.array([0.8, -0.5])
    y, s2 = 0.3, 0.05
    m, P = update_step(m0, P0, y, r, s2)
    # brute-force Bayes on a grid: prior density x likelihood
    g = np.linspace(-2.0, 3.0, 801)
    W1, W2 = np.meshgrid(g, g, indexing="ij")
    D = np.stack([W1 - m0[0], W2 - m0[1]], axis=-1)
    Pi = np.linalg.inv(P0)
    logp = -0.5 * np.einsum("...i,ij,...j->...", D, Pi, D) - 0.5 * (y - (W1 * r[0] + W2 * r[1])) ** 2 / s2
    p = np.exp(logp - logp.max())
    p /= p.sum()
    mean = np.array([(p * W1).sum(), (p * W2).sum()])
    cov11 = (p * (W1 - mean[0]) ** 2).sum()
    assert np.allclose(m, mean, atol=1e-3)
    assert abs(P[0, 0] - cov11) < 1e-3


def test_project_bounds():
    assert project_bounds([1.4], WeightBounds([-1.0], [1.2])).tolist() == [1.2]
    assert project_bounds([0.3], WeightBounds([-1.0], [1.2])).tolist() == [0.3]
    assert project_bounds([-0.1, 0.5], WeightBounds([0, 0], [1, 1])).tolist() == [0.0, 0.5]


# ---------------------------------------------------------------- model type

def test_model_validation():
    with pytest.raises(ModelError):
        StateSpaceModel(np.eye(2) * -1e-6, 1e-4, [0.5, 0.5], np.eye(2), WeightBounds.uniform(2))
    with pytest.raises(ModelError):
        StateSpaceModel(np.zeros((2, 2)), 0.0, [0.5, 0.5], np.eye(2), WeightBounds.uniform(2))
    with pytest.raises(ModelError):
        StateSpaceModel(np.zeros((2, 2)), 1e-4, [3.0, 0.5], np.eye(2), WeightBounds.uniform(2))
    with pytest.raises(ValueError):
        WeightBounds([1.0], [0.0])


def test_model_json_round_trip(tmp_path):
    m = model(3, q=1e-6, s2=2e-4)
    m.to_json(tmp_path / "m.json")
    back = StateSpaceModel.from_json(tmp_path / "m.json")
    assert back.to_dict() == m.to_dict()
    assert set(json.loads((tmp_path / "m.json").read_text())) == {
        "transition_cov", "obs_var", "init_mean", "init_cov", "bounds"}
    with pytest.raises(ModelError):
        StateSpaceModel.from_dict({**m.to_dict(), "extra": 1})


def test_default_model():
    m = StateSpaceModel.default(4)
    assert np.allclose(m.init_mean, 0.5) and np.allclose(np.diag(m.init_cov), 0.25)


# ---------------------------------------------------------------- filtering

def _scenario(seed=0, T=800, weights=(0.6, 0.4), noise=1e-4, step=0.0):
    K = len(weights)
    spec = synth.ScenarioSpec(seed=seed, T=T, K=K, weight_values=tuple(weights),
                              weight_mode="random_walk" if step else "constant",
                              weight_step_vol=step, obs_noise_var=noise)
    return synth.generate(spec)


def test_filter_recovers_constant_two_asset_weights():
    sc = _scenario(seed=0, T=2500)
    res = filter(model(2, s2=1e-4), sc.nav, sc.panel)
    mae = np.abs(res.weights.weights[250:] - np.array([0.6, 0.4])).mean(axis=0)
    assert np.all(mae < 0.05), mae


def test_filter_frozen_without_uncertainty():
    sc = _scenario(T=100)
    m = model(2, q=0.0, p0=0.0, w0=[0.1, 0.9])
    res = filter(m, sc.nav, sc.panel)
    assert np.all(res.weights.weights == np.array([0.1, 0.9]))


def test_single_asset_converges():
    r = np.random.default_rng(7).normal(0, 0.01, 60)
    pn = panel(np.r_[0.0, r][:, None])
    nv = NavSeries(pn.dates, 100 * np.cumprod(np.r_[1.0, 1 + 0.8 * r]))
    res = filter(model(1, s2=1e-8, p0=10.0, w0=[0.0], lo=-5, hi=5), nv, pn)
    assert abs(res.weights.weights[-1, 0] - 0.8) < 0.01


def test_decode_result_shapes_and_bounds():
    sc = _scenario(T=300, weights=(1.9, -0.9), noise=1e-4)
    res = filter(model(2, q=1e-4), sc.nav, sc.panel)
    W = res.weights.weights
    assert W.shape == (299, 2) and len(res.replicated_returns) == 299
    assert np.all(W >= -1.0) and np.all(W <= 2.0)
    held = res.held_weights
    assert np.allclose(res.replicated_returns.values, np.einsum("tk,tk->t", held, sc.panel.returns[1:]))
    assert res.replicated_nav.values[0] == 100.0


def test_filter_errors():
    sc = _scenario(T=50)
    with pytest.raises(DataError, match="misaligned"):
        filter(model(2), sc.nav.take(slice(1, None)), sc.panel)
    bad = sc.panel.returns.copy()
    bad[5, 0] = np.nan
    with pytest.raises(DataError, match="non-finite"):
        filter_returns(model(2), rs(np.zeros(50)), panel(bad))


def test_covariance_stays_psd_and_symmetric():
    sc = _scenario(T=1000, step=1e-3)
    res = filter(model(2, q=1e-6), sc.nav, sc.panel)
    C = res.weight_cov
    assert np.array_equal(C, np.transpose(C, (0, 2, 1)))
    assert np.linalg.eigvalsh(C).min() >= -1e-10


def test_permutation_invariance():
    sc = _scenario(T=500, weights=(0.6, 0.4, 0.2), step=5e-4)
    res = filter(model(3, q=1e-6), sc.nav, sc.panel)
    perm = [2, 0, 1]
    pn = sc.panel.select([sc.panel.asset_names[i] for i in perm])
    res_p = filter(model(3, q=1e-6), sc.nav, pn)
    np.testing.assert_allclose(res_p.weights.weights, res.weights.weights[:, perm], rtol=1e-9, atol=1e-12)


def test_large_obs_var_keeps_prior():
    sc = _scenario(T=300)
    res = filter(model(2, s2=1e12), sc.nav, sc.panel)
    assert np.abs(res.weights.weights - 0.5).max() < 1e-6


def test_innovations_mean_zero():
    sc = _scenario(T=2000, noise=1e-4)
    res = filter(model(2, s2=1e-4), sc.nav, sc.panel)
    e = res.innovations
    assert abs(e.mean()) < 3 * e.std() / math.sqrt(e.size)


def test_deterministic():
    sc = _scenario(T=400, step=1e-3)
    a = filter(model(2, q=1e-6), sc.nav, sc.panel)
    b = filter(model(2, q=1e-6), sc.nav, sc.panel)
    assert np.array_equal(a.weights.weights, b.weights.weights)
    assert a.log_likelihood == b.log_likelihood


def test_zero_factor_day_carries_prior():
    R = np.random.default_rng(1).normal(0, 0.01, (20, 2))
    R[10] = 0.0
    pn = panel(R)
    y = rs(R @ [0.6, 0.4] + 0.001)
    res = filter_returns(model(2, q=0.0), y, pn)
    assert np.array_equal(res.weights.weights[10], res.weights.weights[9])
    assert np.array_equal(res.weight_cov[10], res.weight_cov[9])


# ---------------------------------------------------------------- likelihood

def _direct_loglik(m, y, R):
    w, P = np.array(m.init_mean), np.array(m.init_cov)
    total = 0.0
    for t in range(len(y)):
        P = P + m.transition_cov
        s = R[t] @ P @ R[t] + m.obs_var
        e = y[t] - w @ R[t]
        total += -0.5 * (math.log(2 * math.pi * s) + e * e / s)
        g = P @ R[t] / s
        w = np.clip(w + g * e, m.bounds.lower, m.bounds.upper)
        P = P - np.outer(g, R[t] @ P)
    return total


def test_loglik_matches_direct_recomputation():
    sc = _scenario(T=300, step=1e-3)
    m = model(2, q=1e-6)
    y = np.diff(sc.nav.values) / sc.nav.values[:-1]
    assert math.isclose(log_likelihood(m, sc.nav, sc.panel), _direct_loglik(m, y, sc.panel.returns[1:]),
                        rel_tol=1e-10)


def test_loglik_equals_filter_field():
    sc = _scenario(T=300)
    m = model(2, q=1e-6)
    assert log_likelihood(m, sc.nav, sc.panel) == filter(m, sc.nav, sc.panel).log_likelihood


def test_loglik_decreases_with_obs_var_on_exact_series():
    sc = _scenario(T=300, noise=0.0)
    m = model(2, q=0.0, w0=[0.6, 0.4], p0=1e-8)
    a = log_likelihood(m.replace(obs_var=1e-6), sc.nav, sc.panel)
    b = log_likelihood(m.replace(obs_var=1e-5), sc.nav, sc.panel)
    assert a > b


def test_loglik_invariant_to_date_shift():
    sc = _scenario(T=200)
    shifted = business_days("2015-06-01", 200)
    nv = NavSeries(shifted, sc.nav.values)
    pn = type(sc.panel)(shifted, sc.panel.asset_names, sc.panel.returns)
    m = model(2, q=1e-6)
    assert log_likelihood(m, sc.nav, sc.panel) == log_likelihood(m, nv, pn)


# ---------------------------------------------------------------- MLE

def _fit_scenario(seed, T=1501, step=1e-3):
    return synth.generate(synth.decoder_spec(seed, T=T, weight_mode="random_walk", step_vol=step))


def test_fit_recovers_obs_var_and_beats_truth():
    sc = _fit_scenario(0)
    fit = fit_mle(sc.nav, sc.panel)
    assert 1e-4 / 3 < fit.obs_var < 3e-4
    truth = FitConfig().start_model(4)  # the start point is the generating (Q, sigma2)
    assert log_likelihood(fit, sc.nav, sc.panel) >= log_likelihood(truth, sc.nav, sc.panel) - 1e-6


@pytest.mark.xfail(strict=True, reason="diag Q is weakly identified at T=1500: the likelihood is "
                                       "flat along Q and the maximizer wanders far from the truth")
def test_fit_recovers_q_within_factor_10():
    for seed in range(8):
        q = np.diag(fit_mle(_fit_scenario(seed).nav, _fit_scenario(seed).panel).transition_cov)
        assert np.all((q > 1e-7) & (q < 1e-5)), (seed, q)


def test_fit_constant_nav_hits_obs_var_floor():
    pn = panel(np.random.default_rng(0).normal(0, 0.01, (200, 2)))
    nv = NavSeries(pn.dates, np.full(200, 100.0))
    fit = fit_mle(nv, pn, FitConfig(start_q=1e-12))
    assert fit.obs_var < 1e-7


def test_fit_deterministic_and_never_worse_than_start():
    sc = _fit_scenario(1, T=400)
    cfg = FitConfig(start_obs_var=1e-2, start_q=1e-3)
    a, b = fit_mle(sc.nav, sc.panel, cfg), fit_mle(sc.nav, sc.panel, cfg)
    assert a.to_dict() == b.to_dict()
    assert log_likelihood(a, sc.nav, sc.panel) >= log_likelihood(cfg.start_model(4), sc.nav, sc.panel)


def test_fit_full_q_is_psd():
    sc = _fit_scenario(2, T=400)
    fit = fit_mle(sc.nav, sc.panel, FitConfig(full_q=True, max_iter=150))
    assert np.linalg.eigvalsh(fit.transition_cov).min() >= -1e-15
    assert np.allclose(fit.transition_cov, fit.transition_cov.T)


def test_fit_needs_enough_data():
    sc = _fit_scenario(0, T=30)
    with pytest.raises(DataError, match="need at least 40"):
        fit_mle(sc.nav, sc.panel)


def test_fit_non_finite_objective_echoes_params(monkeypatch):
    import pereplica.decoder as dec
    sc = _fit_scenario(0, T=100)
    monkeypatch.setattr(dec, "_run", lambda *a, **k: (None,) * 5 + (float("nan"),))
    with pytest.raises(FitError, match="obs_var="):
        fit_mle(sc.nav, sc.panel)


def test_psd_repair():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])
    out = psd_repair(a)
    assert np.linalg.eigvalsh(out).min() >= -1e-15


# ---------------------------------------------------------------- sanity checks

def _path(W):
    W = np.asarray(W, float)
    return WeightPath(business_days("2020-01-01", W.shape[0]), tuple(f"a{k}" for k in range(W.shape[1])), W)


def test_sanity_interior_path():
    rep = sanity_check_weights(_path(np.full((50, 2), 0.5)), WeightBounds.uniform(2), 3.0, 0.25)
    assert rep.ok and rep.flags == []


def test_sanity_at_bound_fraction():
    W = np.full((100, 1), 0.5)
    W[20:30] = 2.0
    rep = sanity_check_weights(_path(W), WeightBounds.uniform(1))
    assert math.isclose(rep.at_bound_fraction[0], 0.10)


def test_sanity_jump_flag():
    W = np.full((10, 1), 0.5)
    W[4:] = 0.8
    rep = sanity_check_weights(_path(W), WeightBounds.uniform(1), jump_cap=0.1)
    assert rep.flags == [("2020-01-07", "jump", "a0", pytest.approx(0.3))]
    assert rep.max_jump_date == ["2020-01-07"]


def test_sanity_leverage_flag_and_enforcement():
    W = np.array([[1.5, 1.5, 1.0], [0.5, 0.5, 0.0]])
    rep = sanity_check_weights(_path(W), WeightBounds.uniform(3), leverage_cap=3.0)
    assert [f[1] for f in rep.flags] == ["leverage"]
    W2, scale = enforce_leverage(W, 3.0)
    assert np.allclose(np.abs(W2).sum(axis=1), [3.0, 1.0]) and scale[1] == 1.0
