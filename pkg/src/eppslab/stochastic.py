"""Exact samplers for Brownian and Ornstein-Uhlenbeck paths.

Also holds the closed-form covariances of lagged increments,

    <Z_{t+h} - Z_t, Z_{t+h-m*tau} - Z_{t-m*tau}> = (h - m*tau)_+
    <X_{t+h} - X_t, X_{t+h-m*tau} - X_{t-m*tau}>
        = sigma^2/(2 lambda) * (2 e^{-lambda m tau} - e^{-lambda (h + m tau)}
                                - e^{-lambda |h - m tau|})

for a standard Brownian motion Z and a stationary OU process X, m in {0, 1}.
Both are independent of t.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter


@dataclass(frozen=True)
class OuParams:
    """Zero-mean OU process dX = -lam X dt + sigma dW."""

    lam: float
    sigma: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"OuParams: invariant lambda > 0 violated (lambda={self.lam})")
        if not self.sigma > 0:
            raise ValueError(f"OuParams: invariant sigma > 0 violated (sigma={self.sigma})")

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (2.0 * self.lam)


@dataclass(frozen=True)
class PathGrid:
    dt: float
    n_steps: int
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"PathGrid: invariant dt > 0 violated (dt={self.dt})")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"PathGrid: invariant n_steps >= 1 violated (n_steps={self.n_steps})")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"PathGrid: seed must be an unsigned 64-bit integer (seed={self.seed})")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


@dataclass(frozen=True)
class SampledPath:
    values: np.ndarray
    grid: PathGrid

    def __post_init__(self):
        if len(self.values) != self.grid.n_steps + 1:
            raise ValueError(
                f"SampledPath: expected {self.grid.n_steps + 1} values, got {len(self.values)}"
            )


def stream_id(name: str) -> int:
    """Stable stream id for a named component (crc32 of the name)."""
    return zlib.crc32(name.encode("utf-8"))


def make_rng(seed: int, stream: int | str = 0) -> np.random.Generator:
    """PCG64 generator for the independent stream ``(seed, stream)``.

    Streams are separated through ``SeedSequence.spawn_key`` so that any
    two distinct stream ids yield statistically independent generators.
    """
    if isinstance(stream, str):
        stream = stream_id(stream)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def _check_lag(h: float, m: int, tau: float) -> None:
    if m not in (0, 1):
        raise ValueError(f"lag multiplier m must be 0 or 1, got {m!r}")
    if not h > 0:
        raise ValueError(f"horizon h must be positive, got {h}")
    if tau < 0:
        raise ValueError(f"window tau must be non-negative, got {tau}")


def bm_increment_cov(h: float, m: int, tau: float) -> float:
    """Covariance of a unit BM increment over h with the same increment lagged by m*tau."""
    _check_lag(h, m, tau)
    return max(h - m * tau, 0.0)


def ou_increment_cov(h: float, m: int, tau: float, p: OuParams) -> float:
    """Covariance of a stationary OU increment over h with its m*tau-lagged copy."""
    _check_lag(h, m, tau)
    lag = m * tau
    return p.stationary_variance * (
        2.0 * math.exp(-p.lam * lag)
        - math.exp(-p.lam * (h + lag))
        - math.exp(-p.lam * abs(h - lag))
    )


def sample_ou_path(p: OuParams, grid: PathGrid, stream: int | str = 0) -> SampledPath:
    """Stationary OU path on ``grid`` using the exact Gaussian transition.

    X_0 ~ N(0, sigma^2 / 2 lam) and
    X_{t+dt} = e^{-lam dt} X_t + sqrt(sigma^2 (1 - e^{-2 lam dt}) / 2 lam) * N(0, 1).
    """
    rng = make_rng(grid.seed, stream)
    a = math.exp(-p.lam * grid.dt)
    step_sd = math.sqrt(p.stationary_variance * -math.expm1(-2.0 * p.lam * grid.dt))
    shocks = rng.standard_normal(grid.n_steps + 1)
    shocks[0] *= math.sqrt(p.stationary_variance)
    shocks[1:] *= step_sd
    # AR(1) recursion x[i] = a x[i-1] + shocks[i], seeded by the stationary draw
    values = lfilter([1.0], [1.0, -a], shocks)
    return SampledPath(values, grid)


def sample_bm_path(vol: float, grid: PathGrid, stream: int | str = 0) -> SampledPath:
    """Brownian path started at 0 with increments N(0, vol^2 dt)."""
    if vol < 0:
        raise ValueError(f"vol must be non-negative, got {vol}")
    values = np.zeros(grid.n_steps + 1)
    if vol > 0:
        rng = make_rng(grid.seed, stream)
        np.cumsum(rng.standard_normal(grid.n_steps) * (vol * math.sqrt(grid.dt)), out=values[1:])
    return SampledPath(values, grid)
