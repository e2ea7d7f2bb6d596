"""Flat ``key = value`` configuration shared by config files and CLI flags.

Keys carry a module prefix (``gaussian.theta``, ``abm.eta``, ``run.seed``);
the matching flag is the key without its prefix (``--theta``, ``--eta``).
Per-asset ABM keys take two comma-separated values. Lines starting with
``#`` are comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .abm import FITTED_ASSETS, FITTED_MOMENTUM, AbmConfig, AssetParams, MomentumParams
from .analysis import parse_h_grid
from .gaussian import GaussianModelParams


class ConfigError(ValueError):
    pass


def _pair(text: str) -> tuple[float, float]:
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated values, got {text!r}")
    return float(parts[0]), float(parts[1])


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "on", "yes"):
        return True
    if t in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {v}")
    return v


def _positive_int(text: str) -> int:
    v = int(float(text))
    if v < 1:
        raise ValueError(f"expected a positive integer, got {text!r}")
    return v


def _ci_mode(text: str) -> str:
    if text not in ("blocked", "overlapping"):
        raise ValueError(f"ci_mode must be blocked or overlapping, got {text!r}")
    return text


def _fmt_pair(p) -> str:
    return f"{p[0]!r},{p[1]!r}"


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.split(".", 1)[1].replace("_", "-")

    @property
    def dest(self) -> str:
        return self.name.replace(".", "__")


_gd = GaussianModelParams.defaults()
_am = FITTED_MOMENTUM

KEYS = {
    k.name: k
    for k in [
        Key("run.seed", _u64, 0, "top-level RNG seed"),
        Key("run.h_grid", str, "1:300:1", "horizons in seconds, start:stop:step or a comma list"),
        Key("gaussian.lambda", float, _gd.lam, "noise inventory mean-reversion rate, 1/s"),
        Key("gaussian.sigma", float, _gd.sigma, "noise inventory volatility"),
        Key("gaussian.theta", float, _gd.theta, "price impact elasticity"),
        Key("gaussian.xi", float, 1e-4, "noise ratio nu^2 lambda / sigma^2 (used unless nu is set)"),
        Key("gaussian.nu", float, None, "exogenous price volatility (overrides xi)"),
        Key("gaussian.epsilon", float, _gd.epsilon, "coupling p_bar * theta"),
        Key("gaussian.tau", float, _gd.tau, "momentum window, s"),
        Key("mc.dt", float, 1.0, "Monte Carlo step, s"),
        Key("mc.n_steps", _positive_int, 10_000_000, "Monte Carlo steps"),
        Key("mc.batches", _positive_int, 50, "batches for the Monte Carlo standard error"),
        Key("abm.eta", _pair, tuple(a.eta for a in FITTED_ASSETS), "tick sizes"),
        Key("abm.A", _pair, tuple(a.A for a in FITTED_ASSETS), "base fill intensities, 1/s"),
        Key("abm.k", _pair, tuple(a.k for a in FITTED_ASSETS), "intensity decay per unit half-spread"),
        Key("abm.theta", _pair, tuple(a.theta for a in FITTED_ASSETS), "linear impact per inventory unit"),
        Key("abm.nu", _pair, tuple(a.nu for a in FITTED_ASSETS), "mid noise, price/sqrt(s)"),
        Key("abm.gamma", _pair, tuple(a.gamma for a in FITTED_ASSETS), "market-maker risk aversion"),
        Key("abm.psi_n", _pair, tuple(a.psi_n for a in FITTED_ASSETS), "noise trade sizes"),
        Key("abm.s0", _pair, tuple(a.s0 for a in FITTED_ASSETS), "initial mids"),
        Key("abm.tau", float, _am.tau, "momentum window, s"),
        Key("abm.psi_m", _pair, _am.psi_m, "momentum trade sizes"),
        Key("abm.q_max", _pair, _am.q_max, "momentum inventory caps"),
        Key("abm.momentum", _bool, True, "enable the momentum trader (on/off)"),
        Key("abm.dt", float, 0.5, "simulation step, s"),
        Key("abm.n_steps", _positive_int, 2_000_000, "simulation steps"),
        Key("abm.horizon", float, 1.0, "constant quoting horizon of the market maker"),
        Key("abm.n_seeds", _positive_int, 1, "independent runs averaged into the curve"),
        Key("analysis.dt", float, 1.0, "resampling grid for quotes, s"),
        Key("analysis.max_gap", float, 600.0, "quote staleness that splits the series, s"),
        Key("analysis.ci_mode", _ci_mode, "blocked", "effective sample size for CIs"),
        Key("analysis.level", float, 0.95, "confidence level"),
    ]
}


def read_config_file(path: str | Path) -> dict[str, Any]:
    values: dict[str, Any] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            values[key] = KEYS[key].parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {key}: {exc}") from exc
    return values


def resolve(file_values: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Defaults, then config-file values, then flag overrides."""
    out = {name: key.default for name, key in KEYS.items()}
    out.update(file_values)
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def section(cfg: dict[str, Any], *prefixes: str) -> dict[str, Any]:
    return {k: v for k, v in cfg.items() if k.split(".", 1)[0] in prefixes}


def serialise(cfg: dict[str, Any]) -> dict[str, Any]:
    return {k: (_fmt_pair(v) if isinstance(v, tuple) else v) for k, v in sorted(cfg.items())}


def gaussian_params(cfg: dict[str, Any]) -> GaussianModelParams:
    if not cfg["gaussian.tau"] > 0:
        raise ConfigError("gaussian.tau: invariant tau > 0 violated")
    try:
        if cfg["gaussian.nu"] is not None:
            return GaussianModelParams(
                cfg["gaussian.lambda"], cfg["gaussian.sigma"], cfg["gaussian.theta"],
                cfg["gaussian.nu"], cfg["gaussian.epsilon"], cfg["gaussian.tau"],
            )
        return GaussianModelParams.from_xi(
            lam=cfg["gaussian.lambda"], theta=cfg["gaussian.theta"], xi=cfg["gaussian.xi"],
            epsilon=cfg["gaussian.epsilon"], tau=cfg["gaussian.tau"], sigma=cfg["gaussian.sigma"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def abm_config(cfg: dict[str, Any], seed: int | None = None) -> AbmConfig:
    names = ("eta", "A", "k", "theta", "nu", "gamma", "psi_n", "s0")
    try:
        assets = tuple(
            AssetParams(**{n: cfg[f"abm.{n}"][i] for n in names}) for i in range(2)
        )
        momentum = MomentumParams(
            tau=cfg["abm.tau"], psi_m=cfg["abm.psi_m"], q_max=cfg["abm.q_max"],
            enabled=cfg["abm.momentum"],
        )
        return AbmConfig(
            assets=assets, momentum=momentum, dt=cfg["abm.dt"], n_steps=cfg["abm.n_steps"],
            seed=cfg["run.seed"] if seed is None else seed, horizon=cfg["abm.horizon"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def h_grid(cfg: dict[str, Any], dt: float | None = None):
    try:
        grid = parse_h_grid(cfg["run.h_grid"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if dt is None:
        return grid
    steps = grid / dt
    if not all(math.isclose(s, round(s), abs_tol=1e-9) for s in steps):
        raise ConfigError(f"run.h_grid: every horizon must be a multiple of dt={dt}")
    return grid
