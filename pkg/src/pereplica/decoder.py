"""Latent-weight decoding of a NAV track from a factor-return panel.

The model is linear-Gaussian. Weights follow a random walk

    w_t = w_{t-1} + eta_t,            eta_t ~ N(0, Q)

and the target's return is observed through

    y_t = w_{t-1} . r_t + eps_t,      eps_t ~ N(0, sigma2)

so the replicated NAV compounds ``1 + w_{t-1} . r_t`` exactly like the
target. Inference is exact Gaussian message passing (a forward filter);
after each update the posterior mean is clamped into the weight bounds.
Off-diagonal entries of ``Q`` carry cross-asset coupling of weight moves.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .timeseries import (
    AssetPanel,
    DataError,
    NavSeries,
    ReturnSeries,
    WeightPath,
    nav_to_returns,
    returns_to_nav,
    write_csv,
)

log = logging.getLogger(__name__)

DEFAULT_LOWER = -1.0
DEFAULT_UPPER = 2.0
DEFAULT_P0 = 0.25


class ModelError(ValueError):
    """Invalid state-space model parameters."""


class FitError(RuntimeError):
    """Maximum-likelihood search failed."""


def _sym_psd(a: np.ndarray, what: str, strict: bool = False) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ModelError(f"{what} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ModelError(f"{what} has non-finite entries")
    scale = max(1.0, float(np.abs(a).max()))
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * scale):
        raise ModelError(f"{what} must be symmetric")
    lo = float(np.linalg.eigvalsh(a).min())
    if lo < -1e-12 * scale or (strict and lo <= 0.0):
        raise ModelError(f"{what} must be positive {'definite' if strict else 'semi-definite'} "
                         f"(min eigenvalue {lo:.3g})")


@dataclass(frozen=True, eq=False)
class WeightBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64, ndmin=1)
        hi = np.array(self.upper, dtype=np.float64, ndmin=1)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ModelError("bounds min/max must be 1-D and the same length")
        if np.any(lo > hi):
            raise ModelError("bounds require min <= max for every asset")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def uniform(cls, n_assets: int, lower: float = DEFAULT_LOWER, upper: float = DEFAULT_UPPER):
        return cls(np.full(n_assets, lower), np.full(n_assets, upper))

    @classmethod
    def from_config(cls, cfg, n_assets: int) -> "WeightBounds":
        """``cfg`` holds ``min``/``max``, each a scalar or a per-asset list."""
        lo = np.broadcast_to(np.asarray(cfg.get("min", DEFAULT_LOWER), dtype=float), (n_assets,))
        hi = np.broadcast_to(np.asarray(cfg.get("max", DEFAULT_UPPER), dtype=float), (n_assets,))
        return cls(lo, hi)

    def __len__(self) -> int:
        return self.lower.size

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, w, tol: float = 0.0) -> bool:
        w = np.asarray(w)
        return bool(np.all(w >= self.lower - tol) and np.all(w <= self.upper + tol))

    def to_dict(self) -> dict:
        return {"min": self.lower.tolist(), "max": self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    transition_cov: np.ndarray
    obs_var: float
    init_mean: np.ndarray
    init_cov: np.ndarray
    bounds: WeightBounds

    def __post_init__(self):
        Q = np.array(self.transition_cov, dtype=np.float64, ndmin=2)
        P0 = np.array(self.init_cov, dtype=np.float64, ndmin=2)
        w0 = np.array(self.init_mean, dtype=np.float64, ndmin=1)
        K = w0.size
        if Q.shape != (K, K) or P0.shape != (K, K) or len(self.bounds) != K:
            raise ModelError(f"model dimensions disagree: w0 {K}, Q {Q.shape}, P0 {P0.shape}, "
                             f"bounds {len(self.bounds)}")
        _sym_psd(Q, "transition_cov")
        # P0 = 0 (a known start) is allowed, so only semi-definiteness is required
        _sym_psd(P0, "init_cov")
        if not (math.isfinite(self.obs_var) and self.obs_var > 0):
            raise ModelError("obs_var must be finite and > 0")
        if not self.bounds.contains(w0):
            raise ModelError("init_mean lies outside the weight bounds")
        for a in (Q, P0, w0):
            a.setflags(write=False)
        object.__setattr__(self, "transition_cov", Q)
        object.__setattr__(self, "init_cov", P0)
        object.__setattr__(self, "init_mean", w0)
        object.__setattr__(self, "obs_var", float(self.obs_var))

    @property
    def n_assets(self) -> int:
        return self.init_mean.size

    @classmethod
    def default(cls, n_assets: int, bounds: WeightBounds | None = None, obs_var: float = 1e-4,
                q: float = 1e-6, p0: float = DEFAULT_P0) -> "StateSpaceModel":
        """Weights start at the bound midpoints with a diffuse diagonal prior."""
        bounds = bounds or WeightBounds.uniform(n_assets)
        return cls(np.eye(n_assets) * q, obs_var, bounds.midpoint, np.eye(n_assets) * p0, bounds)

    def replace(self, **changes) -> "StateSpaceModel":
        kw = dict(transition_cov=self.transition_cov, obs_var=self.obs_var,
                  init_mean=self.init_mean, init_cov=self.init_cov, bounds=self.bounds)
        kw.update(changes)
        return StateSpaceModel(**kw)

    def to_dict(self) -> dict:
        return {
            "transition_cov": self.transition_cov.tolist(),
            "obs_var": self.obs_var,
            "init_mean": self.init_mean.tolist(),
            "init_cov": self.init_cov.tolist(),
            "bounds": self.bounds.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateSpaceModel":
        expected = {"transition_cov", "obs_var", "init_mean", "init_cov", "bounds"}
        unknown = set(d) - expected
        if unknown or expected - set(d):
            raise ModelError(f"model document keys must be {sorted(expected)}; "
                             f"unknown {sorted(unknown)}, missing {sorted(expected - set(d))}")
        b = d["bounds"]
        return cls(np.array(d["transition_cov"], dtype=float), float(d["obs_var"]),
                   np.array(d["init_mean"], dtype=float), np.array(d["init_cov"], dtype=float),
                   WeightBounds(b["min"], b["max"]))

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, path) -> "StateSpaceModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Single steps (reference forms of what the kernels do inline)
# ---------------------------------------------------------------------------

def predict_step(mean, cov, Q):
    """Random-walk prediction: mean unchanged, covariance grows by ``Q``."""
    return np.array(mean, dtype=float), np.asarray(cov, dtype=float) + np.asarray(Q, dtype=float)


def update_step(mean, cov, y: float, r, obs_var: float):
    """Exact Gaussian posterior for one scalar observation ``y = w . r + eps``."""
    m = np.asarray(mean, dtype=float)
    P = np.asarray(cov, dtype=float)
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise DataError("non-finite factor return")
    Pr = P @ r
    s = float(r @ Pr) + obs_var
    if s == 0.0:
        raise ModelError("degenerate observation")
    g = Pr / s
    m_post = m + g * (y - float(m @ r))
    P_post = P - np.outer(g, Pr)
    return m_post, 0.5 * (P_post + P_post.T)


def project_bounds(mean, bounds: WeightBounds) -> np.ndarray:
    """Component-wise clamp into ``[min, max]``; no renormalization."""
    return np.clip(np.asarray(mean, dtype=float), bounds.lower, bounds.upper)


# ---------------------------------------------------------------------------
# Filtering
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecodeResult:
    """Filter output on the observation dates (one row per return).

    ``weights[t]`` is the clamped posterior after observing day ``t``;
    the replicated return of day ``t`` used ``weights[t-1]`` (``init_mean``
    for the first day).
    """

    asset_names: tuple
    weights: WeightPath
    weight_cov: np.ndarray
    replicated_returns: ReturnSeries
    target_returns: ReturnSeries
    innovations: np.ndarray
    prediction_var: np.ndarray
    log_likelihood: float
    init_mean: np.ndarray
    nav_base: float = 100.0
    base_date: np.datetime64 | None = None

    @property
    def index(self):
        return self.weights.index

    @property
    def held_weights(self) -> np.ndarray:
        """Weights in force during each day (the pre-update ones)."""
        return np.vstack([self.init_mean[None, :], self.weights.weights[:-1]])

    @property
    def replicated_nav(self) -> NavSeries:
        return returns_to_nav(self.replicated_returns, self.nav_base, self.base_date)

    def to_csv(self, path, start=None) -> None:
        mask = self.index.mask_between(start, None)
        cols = {f"w_{n}": self.weights.weights[mask, k] for k, n in enumerate(self.asset_names)}
        cols["replicated_return"] = self.replicated_returns.values[mask]
        cols["innovation"] = self.innovations[mask]
        write_csv(path, self.index.dates[mask], cols)


def _check_inputs(model: StateSpaceModel, target: ReturnSeries, panel: AssetPanel):
    if panel.n_assets != model.n_assets:
        raise DataError(f"panel has {panel.n_assets} assets, model expects {model.n_assets}")
    if len(target) != len(panel) or not np.array_equal(target.dates, panel.dates):
        raise DataError("target and panel are misaligned; align_inner them first")
    if len(target) < 1:
        raise DataError("no observations")
    y = np.ascontiguousarray(target.values, dtype=np.float64)
    R = np.ascontiguousarray(panel.returns, dtype=np.float64)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(R))):
        raise DataError("non-finite input to the filter")
    return y, R


def _run(model: StateSpaceModel, y, R, store_cov: bool):
    try:
        return kernels.filter_recursion(
            y, R,
            np.ascontiguousarray(model.transition_cov), model.obs_var,
            np.ascontiguousarray(model.init_mean), np.ascontiguousarray(model.init_cov),
            np.ascontiguousarray(model.bounds.lower), np.ascontiguousarray(model.bounds.upper),
            store_cov,
        )
    except ValueError as exc:
        raise ModelError(str(exc)) from None


def filter_returns(model: StateSpaceModel, target: ReturnSeries, panel: AssetPanel,
                   nav_base: float = 100.0, base_date=None) -> DecodeResult:
    """Filter a target *return* series against a panel on identical dates."""
    y, R = _check_inputs(model, target, panel)
    weights, covs, yhat, innov, pred_var, loglik = _run(model, y, R, True)
    return DecodeResult(
        asset_names=panel.asset_names,
        weights=WeightPath(panel.index, panel.asset_names, weights),
        weight_cov=covs,
        replicated_returns=ReturnSeries(panel.index, yhat, "replication"),
        target_returns=target,
        innovations=innov,
        prediction_var=pred_var,
        log_likelihood=float(loglik),
        init_mean=np.array(model.init_mean),
        nav_base=nav_base,
        base_date=base_date,
    )


def _nav_inputs(nav: NavSeries, panel: AssetPanel):
    if len(nav) < 2:
        raise DataError("need at least two NAV points")
    if len(nav) != len(panel) or not np.array_equal(nav.dates, panel.dates):
        raise DataError("NAV and panel are misaligned; align_inner them first")
    return nav_to_returns(nav), panel.take(slice(1, None))


def filter(model: StateSpaceModel, nav: NavSeries, panel: AssetPanel) -> DecodeResult:
    """Decode weights from an aligned NAV track and factor panel.

    Day 0 of the NAV anchors the replication; the panel's day-0 row is unused.
    """
    target, rpanel = _nav_inputs(nav, panel)
    return filter_returns(model, target, rpanel, float(nav.values[0]), nav.dates[0])


def log_likelihood(model: StateSpaceModel, nav: NavSeries, panel: AssetPanel) -> float:
    target, rpanel = _nav_inputs(nav, panel)
    return log_likelihood_returns(model, target, rpanel)


def log_likelihood_returns(model: StateSpaceModel, target: ReturnSeries, panel: AssetPanel) -> float:
    """Prediction-error decomposition of the Gaussian likelihood."""
    y, R = _check_inputs(model, target, panel)
    return float(_run(model, y, R, False)[5])


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit_mle`.

    The search runs over ``log`` of the diagonal of ``Q`` and of ``sigma2``
    (plus raw correlations of ``Q`` when ``full_q``), starting from
    ``start_obs_var`` / ``start_q`` with an initial simplex of ``init_step``
    log-units per coordinate.
    """

    max_iter: int = 500
    rel_tol: float = 1e-6
    xtol: float = 1e-4
    start_obs_var: float = 1e-4
    start_q: float = 1e-6
    obs_var_floor: float = 1e-10
    q_floor: float = 1e-14
    param_ceiling: float = 1.0
    init_step: float = 1.0
    full_q: bool = False
    init_cov_diag: float = DEFAULT_P0
    bounds: WeightBounds | None = None
    init_mean: Sequence[float] | None = None

    def resolved_bounds(self, n_assets: int) -> WeightBounds:
        b = self.bounds or WeightBounds.uniform(n_assets)
        if len(b) != n_assets:
            raise ModelError(f"bounds cover {len(b)} assets, panel has {n_assets}")
        return b

    def start_model(self, n_assets: int) -> StateSpaceModel:
        b = self.resolved_bounds(n_assets)
        w0 = b.midpoint if self.init_mean is None else np.asarray(self.init_mean, dtype=float)
        return StateSpaceModel(np.eye(n_assets) * self.start_q, self.start_obs_var, w0,
                               np.eye(n_assets) * self.init_cov_diag, b)


def psd_repair(a: np.ndarray) -> np.ndarray:
    """Symmetrize and floor eigenvalues at zero."""
    a = 0.5 * (a + a.T)
    vals, vecs = np.linalg.eigh(a)
    out = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return 0.5 * (out + out.T)


class _Params:
    """Maps the unconstrained search vector to (Q, sigma2)."""

    def __init__(self, K: int, cfg: FitConfig):
        self.K = K
        self.cfg = cfg
        self.tri = np.triu_indices(K, 1) if cfg.full_q else (np.array([], int), np.array([], int))
        self.lo_q, self.lo_s = math.log(cfg.q_floor), math.log(cfg.obs_var_floor)
        self.hi = math.log(cfg.param_ceiling)

    def start(self) -> np.ndarray:
        n_off = self.tri[0].size
        return np.concatenate([np.full(self.K, math.log(self.cfg.start_q)), np.zeros(n_off),
                               [math.log(self.cfg.start_obs_var)]])

    def initial_simplex(self, x0: np.ndarray) -> np.ndarray:
        n = x0.size
        sim = np.tile(x0, (n + 1, 1))
        for i in range(n):
            is_corr = self.K <= i < n - 1
            sim[i + 1, i] += 0.2 if is_corr else self.cfg.init_step
        return sim

    def decode(self, x: np.ndarray):
        K = self.K
        q = np.exp(np.clip(x[:K], self.lo_q, self.hi))
        s2 = math.exp(min(max(x[-1], self.lo_s), self.hi))
        if self.cfg.full_q:
            C = np.eye(K)
            C[self.tri] = np.tanh(x[K:-1])
            C.T[self.tri] = C[self.tri]
            d = np.sqrt(q)
            Q = psd_repair(C * np.outer(d, d))
        else:
            Q = np.diag(q)
        return Q, s2


def fit_mle(nav: NavSeries, panel: AssetPanel, config: FitConfig | None = None) -> StateSpaceModel:
    """Maximize the filter likelihood over noise parameters (Nelder-Mead)."""
    target, rpanel = _nav_inputs(nav, panel)
    return fit_mle_returns(target, rpanel, config)


def fit_mle_returns(target: ReturnSeries, panel: AssetPanel,
                    config: FitConfig | None = None) -> StateSpaceModel:
    cfg = config or FitConfig()
    K = panel.n_assets
    if len(target) < 10 * K:
        raise DataError(f"training window has {len(target)} observations; need at least {10 * K}")
    base = cfg.start_model(K)
    y, R = _check_inputs(base, target, panel)
    params = _Params(K, cfg)

    def objective(x):
        Q, s2 = params.decode(x)
        ll = _run(base.replace(transition_cov=Q, obs_var=s2), y, R, False)[5]
        if not math.isfinite(ll):
            raise FitError(f"non-finite log-likelihood at Q diag={np.diag(Q).tolist()}, "
                           f"obs_var={s2!r}")
        return -ll

    x0 = params.start()
    f0 = objective(x0)
    res = minimize(
        objective, x0, method="Nelder-Mead",
        options={
            "maxiter": cfg.max_iter,
            "maxfev": 4 * cfg.max_iter * (x0.size + 1),
            "initial_simplex": params.initial_simplex(x0),
            "xatol": cfg.xtol,
            "fatol": cfg.rel_tol * max(1.0, abs(f0)),
        },
    )
    x_best = res.x if res.fun <= f0 else x0
    Q, s2 = params.decode(x_best)
    log.debug("fit_mle: %d iterations, loglik %.6f -> %.6f (%s)", res.nit, -f0, -min(res.fun, f0),
              res.message)
    return base.replace(transition_cov=Q, obs_var=s2)


# ---------------------------------------------------------------------------
# Sanity checks
# ---------------------------------------------------------------------------

@dataclass
class SanityReport:
    asset_names: tuple
    at_bound_fraction: np.ndarray
    max_jump: np.ndarray
    max_jump_date: list
    gross_leverage: np.ndarray
    flags: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flags

    def summary(self) -> dict:
        return {
            "at_bound_fraction": dict(zip(self.asset_names, self.at_bound_fraction.tolist())),
            "max_jump": dict(zip(self.asset_names, self.max_jump.tolist())),
            "max_jump_date": dict(zip(self.asset_names, self.max_jump_date)),
            "max_gross_leverage": float(self.gross_leverage.max()) if self.gross_leverage.size else 0.0,
            "flags": [list(f) for f in self.flags],
        }


def sanity_check_weights(path, bounds: WeightBounds, leverage_cap: float | None = None,
                         jump_cap: float | None = None, tol: float = 1e-12) -> SanityReport:
    """Bound occupancy, largest one-day moves and gross leverage of a weight path.

    ``path`` is a :class:`DecodeResult` or a :class:`WeightPath`. Flags are
    ``(date, kind, asset, value)`` tuples.
    """
    wp = path.weights if isinstance(path, DecodeResult) else path
    W = wp.weights
    names = wp.asset_names
    dates = [str(d) for d in wp.dates]
    lo, hi = bounds.lower, bounds.upper
    at_bound = (np.abs(W - lo) <= tol) | (np.abs(W - hi) <= tol)
    frac = at_bound.mean(axis=0) if W.shape[0] else np.zeros(len(names))
    gross = np.abs(W).sum(axis=1)
    flags = []

    if W.shape[0] > 1:
        jumps = np.abs(np.diff(W, axis=0))
        arg = jumps.argmax(axis=0)
        max_jump = jumps[arg, np.arange(W.shape[1])]
        max_jump_date = [dates[i + 1] for i in arg]
        if jump_cap is not None:
            for t, k in np.argwhere(jumps > jump_cap):
                flags.append((dates[t + 1], "jump", names[k], float(jumps[t, k])))
    else:
        max_jump = np.zeros(W.shape[1])
        max_jump_date = [None] * W.shape[1]

    for t, k in np.argwhere((W < lo - tol) | (W > hi + tol)):
        flags.append((dates[t], "outside_bounds", names[k], float(W[t, k])))
    if leverage_cap is not None:
        for t in np.flatnonzero(gross > leverage_cap + tol):
            flags.append((dates[t], "leverage", "*", float(gross[t])))
    flags.sort(key=lambda f: (f[0], f[1], f[2]))
    return SanityReport(tuple(names), frac, max_jump, max_jump_date, gross, flags)


def enforce_leverage(weights: np.ndarray, cap: float) -> tuple[np.ndarray, np.ndarray]:
    """Scale rows whose gross exposure exceeds ``cap``; returns (weights, row scale)."""
    gross = np.abs(weights).sum(axis=1)
    scale = np.ones_like(gross)
    over = gross > cap
    scale[over] = cap / gross[over]
    return weights * scale[:, None], scale
