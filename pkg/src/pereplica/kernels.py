"""Hot numeric kernels.

Each kernel exists twice: a scalar-loop form compiled with ``@njit`` and a
pure-numpy form. ``filter_recursion``, ``underwater`` and ``hysteresis_states``
dispatch to one of them according to :data:`pereplica._accel.BACKEND`.
Both forms agree to rounding (the equivalence is covered by the test suite
and timed by ``benchmarks/bench_kernels.py``).
"""
import math

import numpy as np

from ._accel import BACKEND, njit

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Linear-Gaussian weight filter
# ---------------------------------------------------------------------------

@njit(cache=True)
def filter_loop(y, R, Q, obs_var, w0, P0, lower, upper, store_cov):
    T, K = R.shape
    m = w0.copy()
    P = P0.copy()
    Pr = np.empty(K)
    g = np.empty(K)
    weights = np.empty((T, K))
    covs = np.empty((T if store_cov else 1, K, K))
    yhat = np.empty(T)
    innov = np.empty(T)
    pred_var = np.empty(T)
    loglik = 0.0
    for t in range(T):
        # predict: random-walk weights
        for i in range(K):
            for j in range(K):
                P[i, j] += Q[i, j]
        yh = 0.0
        informative = False
        for k in range(K):
            yh += m[k] * R[t, k]
            if R[t, k] != 0.0:
                informative = True
        for i in range(K):
            acc = 0.0
            for j in range(K):
                acc += P[i, j] * R[t, j]
            Pr[i] = acc
        s = obs_var
        for i in range(K):
            s += R[t, i] * Pr[i]
        if not s > 0.0:
            raise ValueError("degenerate observation")
        e = y[t] - yh
        if informative:
            for i in range(K):
                g[i] = Pr[i] / s
            for i in range(K):
                m[i] += g[i] * e
            # symmetric (Joseph-equivalent) covariance update
            for i in range(K):
                for j in range(i, K):
                    v = P[i, j] - g[i] * Pr[j] - Pr[i] * g[j] + s * g[i] * g[j]
                    P[i, j] = v
                    P[j, i] = v
            for k in range(K):
                if m[k] < lower[k]:
                    m[k] = lower[k]
                elif m[k] > upper[k]:
                    m[k] = upper[k]
        loglik += -0.5 * (LOG_2PI + math.log(s) + e * e / s)
        yhat[t] = yh
        innov[t] = e
        pred_var[t] = s
        for k in range(K):
            weights[t, k] = m[k]
        if store_cov:
            for i in range(K):
                for j in range(K):
                    covs[t, i, j] = P[i, j]
    return weights, covs, yhat, innov, pred_var, loglik


def filter_numpy(y, R, Q, obs_var, w0, P0, lower, upper, store_cov):
    T, K = R.shape
    m = w0.copy()
    P = P0.copy()
    weights = np.empty((T, K))
    covs = np.empty((T if store_cov else 1, K, K))
    yhat = np.empty(T)
    innov = np.empty(T)
    pred_var = np.empty(T)
    loglik = 0.0
    for t in range(T):
        r = R[t]
        P = P + Q
        yh = float(m @ r)
        Pr = P @ r
        s = obs_var + float(r @ Pr)
        if not s > 0.0:
            raise ValueError("degenerate observation")
        e = y[t] - yh
        if np.any(r != 0.0):
            g = Pr / s
            m = np.clip(m + g * e, lower, upper)
            P = P - np.outer(g, Pr) - np.outer(Pr, g) + s * np.outer(g, g)
            P = 0.5 * (P + P.T)
        loglik += -0.5 * (LOG_2PI + math.log(s) + e * e / s)
        yhat[t] = yh
        innov[t] = e
        pred_var[t] = s
        weights[t] = m
        if store_cov:
            covs[t] = P
    return weights, covs, yhat, innov, pred_var, loglik


# ---------------------------------------------------------------------------
# Drawdown
# ---------------------------------------------------------------------------

@njit(cache=True)
def underwater_loop(returns):
    n = returns.shape[0]
    out = np.empty(n)
    nav = 1.0
    peak = 1.0
    for t in range(n):
        nav *= 1.0 + returns[t]
        if nav > peak:
            peak = nav
        out[t] = 1.0 - nav / peak
    return out


def underwater_numpy(returns):
    nav = np.cumprod(1.0 + returns)
    peak = np.maximum.accumulate(np.maximum(nav, 1.0))
    return 1.0 - nav / peak


# ---------------------------------------------------------------------------
# Hysteresis state machine
# ---------------------------------------------------------------------------

@njit(cache=True)
def hysteresis_loop(trend, enter_thresh, exit_thresh, confirm_days):
    n = trend.shape[0]
    out = np.zeros(n, dtype=np.int8)
    state = 0
    below = 0
    above = 0
    for t in range(n):
        x = trend[t]
        # NaN fails both comparisons and resets both counters
        below = below + 1 if x < enter_thresh else 0
        above = above + 1 if x > exit_thresh else 0
        if state == 0 and below >= confirm_days:
            state = 1
        elif state == 1 and above >= confirm_days:
            state = 0
        out[t] = state
    return out


def hysteresis_numpy(trend, enter_thresh, exit_thresh, confirm_days):
    # run lengths of consecutive breaches, then a scan over switch candidates
    trend = np.asarray(trend, dtype=np.float64)
    n = trend.shape[0]
    below = _run_lengths(trend < enter_thresh)
    above = _run_lengths(trend > exit_thresh)
    go_on = below >= confirm_days
    go_off = above >= confirm_days
    out = np.zeros(n, dtype=np.int8)
    state = 0
    for t in np.flatnonzero(go_on | go_off):
        if state == 0 and go_on[t]:
            out[t:] = 1
            state = 1
        elif state == 1 and go_off[t]:
            out[t:] = 0
            state = 0
    return out


def _run_lengths(mask):
    idx = np.arange(mask.shape[0])
    last_false = np.maximum.accumulate(np.where(mask, -1, idx))
    return np.where(mask, idx - last_false, 0)


if BACKEND == "numba":
    filter_recursion = filter_loop
    underwater = underwater_loop
    hysteresis_states = hysteresis_loop
else:
    filter_recursion = filter_numpy
    underwater = underwater_numpy
    hysteresis_states = hysteresis_numpy
