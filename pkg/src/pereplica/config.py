"""Run-config (JSON) parsing with strict key checking.

Relative data paths are resolved against the config file's directory.
See ``src/pereplica/data/run_config.schema.json`` for the documented layout.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .asymmetry import AsymmetryConfig
from .backtest import BacktestConfig
from .decoder import FitConfig, WeightBounds
from .overlays import HysteresisConfig, MomentumConfig, TailRiskConfig


class ConfigError(ValueError):
    """Invalid run configuration (exit code 2)."""


@dataclass(frozen=True)
class DataPaths:
    proxy: Path
    panel: Path
    proxy_kind: str = "levels"
    proxy_column: str | None = None
    panel_kind: str = "returns"
    vix: Path | None = None
    benchmarks: dict = field(default_factory=dict)
    benchmark_kind: str = "returns"
    date_column: str = "date"
    missing: str = "reject"


@dataclass(frozen=True)
class RunConfig:
    data: DataPaths
    backtest: BacktestConfig
    out: Path | None = None
    log_level: str = "WARNING"
    bounds_spec: dict | None = None


_TOP = {"data", "backtest", "asymmetry", "overlay", "out", "log_level"}
_DATA = {f.name for f in fields(DataPaths)}
_BACKTEST = {"train_start", "train_end", "test_start", "refit", "leverage_cap", "jump_cap", "bounds", "fit"}
_FIT = {f.name for f in fields(FitConfig)} - {"bounds"}
_TAIL = {f.name for f in fields(TailRiskConfig)}
_MOM = {f.name for f in fields(MomentumConfig)}
_HYST = {f.name for f in fields(HysteresisConfig)}


def _check_keys(d, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"config key '{where}' must be an object")
    for k in d:
        if k not in allowed:
            path = f"{where}.{k}" if where else k
            raise ConfigError(f"unknown config key '{path}'")


def _build(cls, kwargs: dict, where: str):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key '{where}': {exc}") from None


def _path(base: Path, value, key: str, must_exist: bool = True) -> Path:
    if not isinstance(value, str):
        raise ConfigError(f"config key '{key}' must be a path string")
    p = Path(value)
    if not p.is_absolute():
        p = base / p
    if must_exist and not p.exists():
        raise ConfigError(f"input file not found: {p} (config key '{key}')")
    return p


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def parse_run_config(doc: dict, base_dir, overrides: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig`; ``overrides`` (dotted keys) take precedence over ``doc``."""
    doc = json.loads(json.dumps(doc))  # deep copy
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = doc
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value

    base = Path(base_dir)
    _check_keys(doc, _TOP, "")
    if "data" not in doc:
        raise ConfigError("missing config key 'data'")
    if "backtest" not in doc:
        raise ConfigError("missing config key 'backtest'")

    d = doc["data"]
    _check_keys(d, _DATA, "data")
    for req in ("proxy", "panel"):
        if req not in d:
            raise ConfigError(f"missing config key 'data.{req}'")
    bench = d.get("benchmarks") or {}
    _check_keys(bench, set(bench), "data.benchmarks")
    data = DataPaths(
        proxy=_path(base, d["proxy"], "data.proxy"),
        panel=_path(base, d["panel"], "data.panel"),
        proxy_kind=d.get("proxy_kind", "levels"),
        proxy_column=d.get("proxy_column"),
        panel_kind=d.get("panel_kind", "returns"),
        vix=_path(base, d["vix"], "data.vix") if d.get("vix") else None,
        benchmarks={k: _path(base, v, f"data.benchmarks.{k}") for k, v in sorted(bench.items())},
        benchmark_kind=d.get("benchmark_kind", "returns"),
        date_column=d.get("date_column", "date"),
        missing=d.get("missing", "reject"),
    )
    for key in ("proxy_kind", "panel_kind", "benchmark_kind"):
        if getattr(data, key) not in ("levels", "returns"):
            raise ConfigError(f"config key 'data.{key}' must be 'levels' or 'returns'")
    if data.missing not in ("reject", "ffill"):
        raise ConfigError("config key 'data.missing' must be 'reject' or 'ffill'")

    b = doc["backtest"]
    _check_keys(b, _BACKTEST, "backtest")
    for req in ("train_start", "train_end", "test_start"):
        if req not in b:
            raise ConfigError(f"missing config key 'backtest.{req}'")
    fit_doc = b.get("fit", {})
    _check_keys(fit_doc, _FIT, "backtest.fit")
    fit = _build(FitConfig, fit_doc, "backtest.fit")
    bounds_spec = b.get("bounds")
    if bounds_spec is not None:
        _check_keys(bounds_spec, {"min", "max"}, "backtest.bounds")

    asym_doc = doc.get("asymmetry", {})
    _check_keys(asym_doc, {"af", "application_point"}, "asymmetry")
    asym = _build(AsymmetryConfig, asym_doc, "asymmetry")

    ov = doc.get("overlay") or {}
    _check_keys(ov, {"tailrisk", "momentum"}, "overlay")
    tail = None
    if ov.get("tailrisk") is not None:
        _check_keys(ov["tailrisk"], _TAIL, "overlay.tailrisk")
        tail = _build(TailRiskConfig, ov["tailrisk"], "overlay.tailrisk")
    mom = None
    if ov.get("momentum") is not None:
        m = dict(ov["momentum"])
        _check_keys(m, _MOM, "overlay.momentum")
        h = m.pop("hysteresis", {}) or {}
        _check_keys(h, _HYST, "overlay.momentum.hysteresis")
        if m.get("cross_assets") is not None:
            m["cross_assets"] = tuple(m["cross_assets"])
        mom = _build(MomentumConfig, {**m, "hysteresis": _build(HysteresisConfig, h, "overlay.momentum.hysteresis")},
                     "overlay.momentum")

    bt_kw = {k: b[k] for k in ("train_start", "train_end", "test_start", "refit", "leverage_cap", "jump_cap")
             if k in b}
    bt = _build(BacktestConfig, {**bt_kw, "asymmetry": asym, "tailrisk": tail, "momentum": mom, "fit": fit},
                "backtest")
    out = doc.get("out")
    return RunConfig(data=data, backtest=bt,
                     out=_path(base, out, "out", must_exist=False) if out else None,
                     log_level=str(doc.get("log_level", "WARNING")).upper(),
                     bounds_spec=bounds_spec)


def with_bounds(cfg: RunConfig, n_assets: int) -> BacktestConfig:
    """Resolve scalar-or-list bounds once the panel width is known."""
    if cfg.bounds_spec is None:
        return cfg.backtest
    try:
        bounds = WeightBounds.from_config(cfg.bounds_spec, n_assets)
    except ValueError as exc:
        raise ConfigError(f"config key 'backtest.bounds': {exc}") from None
    return BacktestConfig(**{**{f.name: getattr(cfg.backtest, f.name) for f in fields(BacktestConfig)},
                             "bounds": bounds})
