"""pereplica command line: decode, fit, backtest, stats, synth.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error. Errors
print one line ``error[CODE]: message`` on stderr; tracebacks only at
``--log-level DEBUG``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import stats
from .backtest import BacktestError, decode_walk_forward, resolve_fit_config, run_backtest
from .config import ConfigError, RunConfig, load_config, parse_run_config, with_bounds
from .decoder import FitError, ModelError, fit_mle_returns
from .overlays import VixInputs
from .synth import SpecError, ScenarioSpec, decoder_spec, generate, riskoff_spec, stress_spec
from .timeseries import (
    DataError,
    align_inner,
    load_nav,
    load_panel,
    load_returns,
    nav_to_returns,
    read_table,
    write_csv,
)

log = logging.getLogger("pereplica")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
PRESETS = {"decoder": decoder_spec, "stress": stress_spec, "riskoff": riskoff_spec}


class UsageError(ValueError):
    pass


def _common(p: argparse.ArgumentParser, config: bool = True):
    if config:
        p.add_argument("--config", metavar="PATH", help="run-config JSON file")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides config 'out')")
    p.add_argument("--seed", type=int, help="random seed (synth only; ignored elsewhere)")
    p.add_argument("--log-level", metavar="L", help="DEBUG, INFO, WARNING or ERROR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pereplica", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("decode", help="fit the decoder and export test-period weights and replication")
    _common(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("fit", help="fit noise parameters on the training window; write model.json")
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("backtest", help="full replication pipeline and report")
    _common(p)
    p.add_argument("--af", type=float, help="asymmetry adjustment factor (overrides config)")
    p.add_argument("--application-point", choices=("on_output", "on_target"))
    p.add_argument("--refit", choices=("never", "annual"))
    p.add_argument("--grid", metavar="KEY=V1,V2",
                   help="sweep one of af/refit/leverage_cap; runs go to OUT/KEY=V in parallel")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("stats", help="statistics table of a returns CSV")
    p.add_argument("returns_csv")
    p.add_argument("--ppy", type=int, required=True, help="periods per year (252 daily, 4 quarterly)")
    p.add_argument("--column", help="value column (default: the only one)")
    p.add_argument("--kind", choices=("returns", "levels"), default="returns")
    _common(p, config=False)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("synth", help="write a synthetic scenario from a spec JSON")
    p.add_argument("spec_json")
    _common(p, config=False)
    p.set_defaults(func=cmd_synth)
    return parser


# ---------------------------------------------------------------------------
# Shared loading
# ---------------------------------------------------------------------------

def _run_config(args, overrides=None) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    doc = load_config(args.config)
    cfg = parse_run_config(doc, Path(args.config).resolve().parent, overrides)
    if args.log_level is None:
        logging.getLogger().setLevel(cfg.log_level)
    return cfg


def _out_dir(args, cfg: RunConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.out is not None:
        return cfg.out
    raise ConfigError("no output directory: pass --out or set 'out' in the config")


def _load_inputs(cfg: RunConfig):
    d = cfg.data
    panel = load_panel(d.panel, d.panel_kind, d.date_column, d.missing)
    nav = load_nav(d.proxy, d.proxy_kind, d.proxy_column, d.date_column, d.missing)
    vix = None
    if d.vix is not None:
        vix = VixInputs.from_table(*read_table(d.vix, d.date_column, d.missing))
    benchmarks = {name: load_returns(p, kind=d.benchmark_kind, date_column=d.date_column, missing=d.missing)
                  for name, p in d.benchmarks.items()}
    return panel, nav, vix, benchmarks


def _decode_inputs(cfg: RunConfig):
    panel, nav, _, _ = _load_inputs(cfg)
    panel, nav = align_inner(panel, nav)
    bt = with_bounds(cfg, panel.n_assets)
    keep = nav.dates >= np.datetime64(bt.train_start, "D")
    first = max(int(np.argmax(keep)) - 1, 0)
    nav, panel = nav.take(slice(first, None)), panel.take(slice(first, None))
    return nav_to_returns(nav), panel.take(slice(1, None)), bt


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    target, rpanel, bt = _decode_inputs(cfg)
    train = target.index.mask_between(bt.train_start, bt.train_end)
    model = fit_mle_returns(target.take(train), rpanel.take(train), resolve_fit_config(bt, rpanel.n_assets))
    out.mkdir(parents=True, exist_ok=True)
    model.to_json(out / "model.json")
    print(f"model written to {out / 'model.json'} (obs_var={model.obs_var:.6g})")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(args, cfg)
    target, rpanel, bt = _decode_inputs(cfg)
    parts, model, _ = decode_walk_forward(target, rpanel, bt)
    dates = np.concatenate([res.index.dates[a:b] for a, b, res in parts])
    W = np.vstack([res.weights.weights[a:b] for a, b, res in parts])
    yhat = np.concatenate([res.replicated_returns.values[a:b] for a, b, res in parts])
    innov = np.concatenate([res.innovations[a:b] for a, b, res in parts])
    y = np.concatenate([res.target_returns.values[a:b] for a, b, res in parts])
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "weights.csv", dates, {n: W[:, k] for k, n in enumerate(rpanel.asset_names)})
    write_csv(out / "replication.csv", dates, {"replicated_return": yhat, "innovation": innov, "target": y})
    model.to_json(out / "model.json")
    print(f"decoded {len(dates)} test days into {out}")
    return EXIT_OK


def _backtest_once(cfg: RunConfig, out: Path) -> dict:
    panel, nav, vix, benchmarks = _load_inputs(cfg)
    bt = with_bounds(cfg, panel.n_assets)
    report = run_backtest(nav, panel, benchmarks, bt, vix)
    report.write(out)
    return report.summary()


def _grid_job(job):
    cfg, out = job
    _backtest_once(cfg, out)
    return str(out)


def cmd_backtest(args) -> int:
    overrides = {"asymmetry.af": args.af, "asymmetry.application_point": args.application_point,
                 "backtest.refit": args.refit}
    if not args.grid:
        cfg = _run_config(args, overrides)
        out = _out_dir(args, cfg)
        summary = _backtest_once(cfg, out)
        s = summary["stats"]
        print(f"report written to {out}: annual_return={s['annual_return']:.4f} "
              f"sharpe={s['sharpe']:.3f} max_dd={s['max_dd']:.4f}")
        return EXIT_OK

    key, _, values = args.grid.partition("=")
    dotted = {"af": "asymmetry.af", "refit": "backtest.refit", "leverage_cap": "backtest.leverage_cap"}
    if key not in dotted or not values:
        raise UsageError(f"--grid expects one of {sorted(dotted)} as KEY=V1,V2,...")
    cast = str if key == "refit" else float
    jobs = []
    base_out = None
    for raw in values.split(","):
        cfg = _run_config(args, {**overrides, dotted[key]: cast(raw)})
        base_out = base_out or _out_dir(args, cfg)
        jobs.append((cfg, base_out / f"{key}={raw}"))
    # each run is isolated: separate process, separate output directory
    with ProcessPoolExecutor() as pool:
        for done in pool.map(_grid_job, jobs):
            print(f"report written to {done}")
    return EXIT_OK


def cmd_stats(args) -> int:
    r = load_returns(args.returns_csv, column=args.column, kind=args.kind)
    table = stats.full_table(r, args.ppy)
    text = table.to_csv()
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        if out.suffix.lower() != ".csv":
            out.mkdir(parents=True, exist_ok=True)
            out = out / "stats.csv"
        out.write_text(text, encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        doc = json.loads(Path(args.spec_json).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"spec file not found: {args.spec_json}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.spec_json}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("scenario spec must be a JSON object")
    if args.seed is not None:
        doc["seed"] = args.seed
    preset = doc.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; have {sorted(PRESETS)}")
        base = PRESETS[preset](doc.pop("seed", 0)).to_dict()
        doc = {**base, **doc}
    spec = ScenarioSpec.from_dict(doc)
    out = Path(args.out or ".")
    generate(spec).write(out)
    print(f"scenario seed={spec.seed} T={spec.T} K={spec.K} written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (args.log_level or "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        print(f"error[E_USAGE]: unknown log level {args.log_level!r}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SpecError, UsageError) as exc:
        code, status = ("E_CONFIG" if not isinstance(exc, UsageError) else "E_USAGE"), EXIT_USAGE
        err = exc
    except (DataError, ModelError, FitError, BacktestError, stats.StatsError, OSError) as exc:
        code, status, err = "E_RUNTIME", EXIT_RUNTIME, exc
    if level == "DEBUG":
        traceback.print_exception(type(err), err, err.__traceback__, file=sys.stderr)
    print(f"error[{code}]: {err}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
