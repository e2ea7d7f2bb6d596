"""Command-line driver tying the closed form, the simulators and the estimator together."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .abm import SimulationAborted, run_simulation
from .analysis import (
    CorrelationCurve,
    DegenerateInputError,
    IngestionError,
    _format_value,
    common_grid,
    correlation_curve,
    curve_ci,
    filter_weekends,
    load_quotes,
    mask_weekend_points,
    to_mid_series,
)
from .config import (
    KEYS,
    ConfigError,
    abm_config,
    gaussian_params,
    h_grid,
    read_config_file,
    resolve,
    section,
    serialise,
)
from .gaussian import lag_steps, mc_correlation_curve, rho_curve
from .stochastic import PathGrid

log = logging.getLogger("eppslab")

# which config keys each subcommand exposes as flags
COMMAND_KEYS = {
    "gaussian-curve": ["gaussian."],
    "gaussian-mc": ["gaussian.", "mc."],
    "abm-run": ["abm.", "analysis.ci_mode", "analysis.level"],
    "analyze": ["analysis."],
    "compare": [],
}


def _keys_for(command: str) -> list[str]:
    pats = COMMAND_KEYS[command]
    return [k for k in KEYS if any(k == p or (p.endswith(".") and k.startswith(p)) for p in pats)]


def write_meta(out: Path, command: str, cfg: dict, extra: dict | None = None) -> Path:
    """Echo the effective configuration next to an output file."""
    meta = {"command": command, "version": __version__, "config": serialise(cfg)}
    if extra:
        meta.update(extra)
    path = out.with_name(out.name + ".meta.json")
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def cmd_gaussian_curve(cfg: dict, out: Path) -> CorrelationCurve:
    p = gaussian_params(cfg)
    grid = h_grid(cfg)
    curve = rho_curve(grid, p)
    curve.to_csv(out)
    i = int(np.argmax(curve.rho))
    write_meta(out, "gaussian-curve", section(cfg, "run", "gaussian"),
               {"xi": p.xi, "nu": p.nu, "peak_h": float(curve.h[i]), "peak_rho": float(curve.rho[i])})
    log.info("peak rho=%.6g at h=%g", curve.rho[i], curve.h[i])
    return curve


def cmd_gaussian_mc(cfg: dict, out: Path) -> CorrelationCurve:
    p = gaussian_params(cfg)
    dt = cfg["mc.dt"]
    try:
        lag_steps(p.tau, dt)
    except ValueError as exc:
        raise ConfigError(f"mc.dt: {exc}") from exc
    grid = h_grid(cfg, dt)
    curve = mc_correlation_curve(p, PathGrid(dt, cfg["mc.n_steps"], cfg["run.seed"]), grid, cfg["mc.batches"])
    curve.to_csv(out)
    dev = np.abs(curve.rho - curve.extra["rho_closed_form"]) / curve.extra["mc_se"]
    summary = {
        "max_abs_deviation": float(np.max(np.abs(curve.rho - curve.extra["rho_closed_form"]))),
        "max_deviation_in_se": float(np.max(dev)),
    }
    write_meta(out, "gaussian-mc", section(cfg, "run", "gaussian", "mc"), summary)
    print(f"max |rho_mc - rho_closed_form| = {summary['max_abs_deviation']:.4g} "
          f"({summary['max_deviation_in_se']:.2f} SE)")
    return curve


def write_prices(path: Path, prices) -> None:
    s1, s2 = prices
    t = np.arange(len(s1)) * s1.dt
    with open(path, "w", newline="") as fh:
        fh.write("time_s,mid_1,mid_2\n")
        fh.writelines(
            f"{_format_value(a)},{_format_value(b)},{_format_value(c)}\n"
            for a, b, c in zip(t.tolist(), s1.mids.tolist(), s2.mids.tolist())
        )


def average_curves(curves: list[CorrelationCurve], level: float) -> CorrelationCurve:
    """Seed-average: mean rho, summed effective counts, Fisher CI on the pooled count."""
    if len(curves) == 1:
        return curves[0]
    rho = np.mean([c.rho for c in curves], axis=0)
    n_eff = np.sum([c.n_effective for c in curves], axis=0)
    lo, hi = zip(*(curve_ci(r, int(n), level) for r, n in zip(rho, n_eff)))
    return CorrelationCurve(curves[0].h, rho, lo, hi, n_eff)


def cmd_abm_run(cfg: dict, out: Path, prices_out: Path | None = None) -> CorrelationCurve:
    base = abm_config(cfg)
    grid = h_grid(cfg, base.dt)
    curves, checks = [], []
    for i in range(cfg["abm.n_seeds"]):
        run_cfg = abm_config(cfg, seed=(cfg["run.seed"] + i) % 2**64)
        try:
            result = run_simulation(run_cfg, record_inventory=False)
        except SimulationAborted as exc:
            raise RuntimeError(f"seed {run_cfg.seed}: {exc}") from exc
        checks.append({"seed": run_cfg.seed, **result.checks})
        ok = result.checks["conservation_violations"] == 0 and result.checks["cap_violations"] == 0
        log.info("seed %d: conservation and cap invariants %s", run_cfg.seed, "hold" if ok else "VIOLATED")
        if i == 0:
            write_prices(prices_out or out.with_name(out.stem + ".prices.csv"), result.prices)
        curves.append(correlation_curve(*result.prices, grid, cfg["analysis.ci_mode"], cfg["analysis.level"]))
    curve = average_curves(curves, cfg["analysis.level"])
    curve.to_csv(out)
    write_meta(out, "abm-run", section(cfg, "run", "abm") | {k: cfg[k] for k in ("analysis.ci_mode", "analysis.level")},
               {"invariant_checks": checks})
    return curve


def cmd_analyze(cfg: dict, inputs: list[Path], out: Path) -> CorrelationCurve:
    if len(inputs) != 2:
        raise ConfigError("analyze needs exactly two quote files")
    tables = [filter_weekends(load_quotes(p)) for p in inputs]
    dt = cfg["analysis.dt"]
    t0, n = common_grid(tables, dt)
    series = [
        mask_weekend_points(to_mid_series(q, dt, t0_us=t0, n=n, max_gap=cfg["analysis.max_gap"]))
        for q in tables
    ]
    grid = h_grid(cfg, dt)
    curve = correlation_curve(*series, grid, cfg["analysis.ci_mode"], cfg["analysis.level"])
    curve.to_csv(out)
    write_meta(out, "analyze", section(cfg, "run", "analysis"), {
        "inputs": [str(p) for p in inputs],
        "rows_kept": [len(q) for q in tables],
        "rows_rejected": [q.n_rejected for q in tables],
        "grid_t0_us": t0,
        "grid_points": n,
        "ci_mode_note": "overlapping returns; CI counts every overlapping pair"
        if cfg["analysis.ci_mode"] == "overlapping" else "blocked effective sample size",
    })
    return curve


def cmd_compare(inputs: list[Path], out: Path) -> None:
    """Inner-join curve files on h; one rho column per input."""
    if len(inputs) < 2:
        raise ConfigError("compare needs at least two curve files")
    names, tables = [], []
    for p in inputs:
        curve = CorrelationCurve.read_csv(p)
        name = p.stem
        while name in names:
            name += "_2"
        names.append(name)
        tables.append(dict(zip(curve.h.tolist(), curve.rho.tolist())))
    common = sorted(set.intersection(*(set(t) for t in tables)))
    if not common:
        raise ConfigError("compare: the curve files share no horizon")
    with open(out, "w", newline="") as fh:
        fh.write(",".join(["h_seconds", *names]) + "\n")
        for h in common:
            fh.write(",".join([_format_value(h), *(_format_value(t[h]) for t in tables)]) + "\n")
    write_meta(out, "compare", {}, {"inputs": [str(p) for p in inputs], "columns": names})


COMMAND_HELP = {
    "gaussian-curve": "closed-form rho(h) of the Gaussian momentum model",
    "gaussian-mc": "Monte Carlo rho(h) of the Gaussian model beside the closed form",
    "abm-run": "simulate the agent-based market and estimate its rho(h)",
    "analyze": "estimate rho(h) from two bid/ask quote files",
    "compare": "join several curve CSVs on their common horizons",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eppslab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMAND_KEYS:
        sp = sub.add_parser(command, help=COMMAND_HELP[command], description=COMMAND_HELP[command])
        sp.add_argument("--out", type=Path, required=True, help="output CSV path")
        if command != "compare":
            sp.add_argument("--config", type=Path, help="flat key = value config file")
            sp.add_argument("--seed", dest="run__seed", help="top-level RNG seed (u64)")
            sp.add_argument("--h-grid", dest="run__h_grid", help="start:stop:step in seconds")
        for name in _keys_for(command):
            key = KEYS[name]
            sp.add_argument(key.flag, dest=key.dest, help=key.help)
        if command == "abm-run":
            sp.add_argument("--prices-out", type=Path, help="mid-price CSV (default <out>.prices.csv)")
        if command == "analyze":
            sp.add_argument("inputs", nargs=2, type=Path, metavar="QUOTES_CSV")
        if command == "compare":
            sp.add_argument("inputs", nargs="+", type=Path, metavar="CURVE_CSV")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    for name, key in KEYS.items():
        raw = getattr(args, key.dest, None)
        if raw is None:
            continue
        try:
            out[name] = key.parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{key.flag}: {exc}") from exc
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compare":
            cmd_compare(args.inputs, args.out)
            return 0
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(file_values, _overrides(args))
        if args.command == "gaussian-curve":
            cmd_gaussian_curve(cfg, args.out)
        elif args.command == "gaussian-mc":
            cmd_gaussian_mc(cfg, args.out)
        elif args.command == "abm-run":
            cmd_abm_run(cfg, args.out, args.prices_out)
        elif args.command == "analyze":
            cmd_analyze(cfg, args.inputs, args.out)
    except (ConfigError, IngestionError) as exc:
        print(f"eppslab {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DegenerateInputError, RuntimeError, ValueError, OSError) as exc:
        print(f"eppslab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
