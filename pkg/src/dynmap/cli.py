"""Command-line front end.

Subcommands::

    dynmap run            one simulation, metrics JSON + per-slot CSV
    dynmap sweep          Monte Carlo campaign over a parameter grid
    dynmap calibrate      build the error-threshold -> period map
    dynmap analyze-pcoll  collision probability table P_coll(N, rho)
    dynmap analyze-map    inspect a calibration map
    dynmap gen-traffic    write a synthetic grid trace as CSV

Settings come from an optional ``key = value`` file (``-c``) followed by
``key=value`` overrides on the command line. Exit status is 0 on success, 2 for
configuration or input errors and 3 for failures during a run.
"""

from __future__ import annotations

import argparse
import itertools
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .config import ConfigError, SimConfig, coerce_value, load_config
from .congestion import ErrorPeriodMap, p_coll, rho_grid
from .engine import (calibrate_error_distribution, check_config, default_workers, load_map, make_trace,
                     monte_carlo, run_sim)
from .mobility import TraceError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ENV = "DYNMAP_OUTPUT_DIR"
PCOLL_SCHEMA = "# dynmap pcoll-table v1"
MEAN_ERROR_SCHEMA = "# dynmap calibration-mean-error v1"
MAP_REPORT_SCHEMA = "# dynmap map-report v1"

# shorthand sweep key expanding to strategy + congestion control
SCHEMES = {
    "PB": ("PB", "none"), "ETB": ("ETB", "none"),
    "PB+CSCC": ("PB", "CSCC"), "PB+NACC": ("PB", "NACC"),
    "ETB+CSCC": ("ETB", "CSCC"), "ETB+NACC": ("ETB", "NACC"),
}


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or "results")


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        out[key] = coerce_value(key, raw)
    return out


def _config(args) -> SimConfig:
    values = _overrides(args.set)
    if args.seed is not None:
        values["seed"] = args.seed
    if getattr(args, "map", None):
        values["calibration_map"] = str(args.map)
    cfg, _ = load_config(args.config, values)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = _config(args)
    emap = load_map(cfg)
    check_config(cfg, emap)
    out = _out_dir(args)
    trace = make_trace(cfg, cfg.seed)
    log = open(out / "events.csv", "w", newline="") if args.event_log else None
    try:
        m = run_sim(cfg, trace, cfg.seed, emap, event_log=log)
    finally:
        if log is not None:
            log.close()
    (out / "config.txt").write_text(cfg.to_text())
    (out / "metrics.json").write_text(m.to_json() + "\n")
    m.write_series_csv(out / "series.csv", cfg.T_t, first_slot=int(round(cfg.warmup / cfg.T_t)))
    print(f"mean_error={m.mean_error:.4f} m  p95={m.p95_error:.4f} m  detection={m.detection_error:.4f}  "
          f"collisions={m.collision_rate:.4f}/veh/s  T_tx={m.mean_tx_interval:.4f} s  -> {out}")
    return EXIT_OK


def parse_grid(specs) -> list[dict]:
    """Cartesian product of ``key=v1,v2,...`` axes.

    The pseudo-key ``scheme`` takes names such as ``ETB+NACC`` and expands to
    ``strategy`` and ``congestion``.
    """
    axes = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"grid axis must look like key=v1,v2,... got {spec!r}")
        key, raw = (s.strip() for s in spec.split("=", 1))
        vals = [v.strip() for v in raw.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"grid axis {key!r} has no values")
        if key == "scheme":
            bad = [v for v in vals if v not in SCHEMES]
            if bad:
                raise ConfigError(f"unknown scheme {bad[0]!r}; choose from {', '.join(SCHEMES)}")
            axes.append([dict(zip(("strategy", "congestion"), SCHEMES[v])) for v in vals])
        else:
            axes.append([{key: coerce_value(key, v)} for v in vals])
    if not axes:
        raise ConfigError("empty sweep grid: give at least one --grid key=v1,v2,...")
    return [{k: v for part in combo for k, v in part.items()} for combo in itertools.product(*axes)]


def cmd_sweep(args) -> int:
    cfg = _config(args)
    points = parse_grid(args.grid)
    emap = load_map(cfg)
    for p in points:
        check_config(cfg.replace(**p), emap)
    out = _out_dir(args)
    workers = args.workers if args.workers is not None else 1
    summary = monte_carlo(cfg, points, n_runs=args.runs, workers=workers, emap=emap)
    summary.write(out)
    (out / "config.txt").write_text(cfg.to_text())
    for coords, st in zip(summary.points, summary.stats):
        print(" ".join(f"{k}={v}" for k, v in sorted(coords.items())),
              f"mean_error={st['mean_error']['mean']:.4f}",
              f"p95={st['p95_error']['mean']:.4f}",
              f"T_tx={st['mean_tx_interval']['mean']:.4f}")
    print(f"{len(points)} points x {len(summary.runs[0])} runs -> {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    trace = make_trace(cfg, cfg.seed)
    cal = calibrate_error_distribution(cfg, trace, cfg.seed)
    emap = cal.build_map(cfg.T_t)
    path = out / "error_period_map.csv"
    emap.save_csv(path)
    with open(out / "mean_error.csv", "w") as fh:
        fh.write(MEAN_ERROR_SCHEMA + "\n")
        fh.write("horizon_slots,time_s,mean_error_m,n_samples\n")
        for h, (e, n) in enumerate(zip(cal.mean_error, cal.counts), 1):
            fh.write(f"{h},{h * cfg.T_t!r},{float(e)!r},{int(n)}\n")
    print(f"map with {len(emap.E_grid)} thresholds, F(0)={emap(0.0):.3f} s, "
          f"F({emap.E_grid[-1]:g})={emap(emap.E_grid[-1]):.3f} s -> {path}")
    return EXIT_OK


def cmd_analyze_pcoll(args) -> int:
    if args.n_max < 1 or args.rho_points < 2:
        raise ConfigError("need --n-max >= 1 and --rho-points >= 2")
    if not 0 < args.rho_min < args.rho_max <= 1:
        raise ConfigError("need 0 < rho-min < rho-max <= 1")
    rhos = rho_grid(args.rho_min, args.rho_max, args.rho_points) if args.log_grid else \
        np.linspace(args.rho_min, args.rho_max, args.rho_points)
    lines = [PCOLL_SCHEMA, "N_sc,rho,P_coll"]
    for n in range(1, args.n_max + 1):
        for r, p in zip(rhos, p_coll(rhos, float(n))):
            lines.append(f"{n},{float(r)!r},{float(p)!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_analyze_map(args) -> int:
    emap = ErrorPeriodMap.load_csv(args.map)
    diffs = np.diff(emap.T_period)
    monotone = bool(np.all(diffs >= 0))
    lines = [MAP_REPORT_SCHEMA + f" T_t={emap.T_t!r} monotone={monotone}",
             "E_thr_m,T_period_s,rho_equivalent"]
    for e, t in zip(emap.E_grid, emap.T_period):
        lines.append(f"{float(e)!r},{float(t)!r},{float(emap.T_t / t)!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if not monotone:
        print("warning: map is not monotone", file=sys.stderr)
    return EXIT_OK


def cmd_gen_traffic(args) -> int:
    cfg = _config(args)
    if cfg.trace:
        raise ConfigError("gen-traffic synthesises a trace; unset 'trace'")
    trace = make_trace(cfg, cfg.seed)
    path = Path(args.out) if args.out else default_output_dir() / "trace.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    trace.to_csv(path)
    print(f"{trace.n_vehicles} vehicles, {trace.n_slots} slots, {trace.density():.1f} veh/km2 -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynmap", description="Dynamic-map broadcasting simulator")
    ap.add_argument("--version", action="version", version=f"dynmap {__version__} ({backend()} kernels)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_help="output directory (default: $DYNMAP_OUTPUT_DIR or ./results)"):
        p.add_argument("-c", "--config", help="key = value configuration file")
        p.add_argument("--seed", type=int, help="base seed (overrides the config)")
        p.add_argument("-o", "--out", help=out_help)
        p.add_argument("set", nargs="*", metavar="key=value", help="configuration overrides")

    p = sub.add_parser("run", help="run one simulation")
    common(p)
    p.add_argument("--map", help="calibration map CSV (sets calibration_map)")
    p.add_argument("--event-log", action="store_true", help="also write the per-packet channel log")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Monte Carlo campaign over a grid")
    common(p)
    p.add_argument("--map", help="calibration map CSV (sets calibration_map)")
    p.add_argument("--grid", action="append", default=[], metavar="key=v1,v2,...",
                   help="sweep axis; repeat for a cartesian product (key 'scheme' accepts e.g. ETB+NACC)")
    p.add_argument("--runs", type=int, help="runs per point (default: N_sim)")
    p.add_argument("--workers", type=int, help=f"parallel worker processes (this machine: {default_workers()})")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="build the error-threshold to period map")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("analyze-pcoll", help="tabulate the hidden-terminal collision probability")
    p.add_argument("--n-max", type=int, default=10, help="largest hidden population N (rows use 1..N)")
    p.add_argument("--rho-points", type=int, default=100)
    p.add_argument("--rho-min", type=float, default=0.01)
    p.add_argument("--rho-max", type=float, default=1.0)
    p.add_argument("--log-grid", action="store_true", help="geometric instead of linear rho spacing")
    p.add_argument("-o", "--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_analyze_pcoll)

    p = sub.add_parser("analyze-map", help="report a calibration map")
    p.add_argument("map", help="calibration map CSV")
    p.add_argument("-o", "--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_analyze_map)

    p = sub.add_parser("gen-traffic", help="write a synthetic grid trace")
    common(p, out_help="trace CSV path (default: $DYNMAP_OUTPUT_DIR/trace.csv)")
    p.set_defaults(func=cmd_gen_traffic)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    warnings.simplefilter("default")
    try:
        return args.func(args)
    except (ConfigError, TraceError) as exc:
        print(f"dynmap: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return 130
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"dynmap: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
