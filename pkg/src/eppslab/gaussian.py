"""Gaussian momentum model: closed-form cross-correlation and its Monte Carlo check.

Two assets are traded by an index momentum trader with window tau, an OU
noise trader per asset (rate lam, vol sigma) and a market maker; prices move
with linear impact theta plus Brownian noise nu. To first order in the
coupling epsilon = p_bar * theta,

    rho(h) = 2 eps [theta^2 (1 - e^{-lam h} - e^{-lam tau} + e^{-lam (h+tau)}/2
                             + e^{-lam |h-tau|}/2) + xi min(h, tau)]
             / [theta^2 (1 - e^{-lam h}) + xi h],        xi = nu^2 lam / sigma^2,

which has a kink (sharp local maximum) at h = tau.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import CorrelationCurve, PriceSeries, _pearson, correlation_curve, simple_returns
from .stochastic import OuParams, PathGrid, sample_bm_path, sample_ou_path

MAX_EPSILON = 0.25


@dataclass(frozen=True)
class GaussianModelParams:
    """Parameters of the Gaussian model.

    ``tau = 0``, ``theta = 0`` and ``epsilon = 0`` are admitted as degenerate
    limits (no momentum window, no impact, no coupling).
    """

    lam: float
    sigma: float
    theta: float
    nu: float
    epsilon: float
    tau: float

    def __post_init__(self):
        checks = [
            (self.lam > 0, "lambda > 0"),
            (self.sigma > 0, "sigma > 0"),
            (self.theta >= 0, "theta >= 0"),
            (self.nu >= 0, "nu >= 0"),
            (self.tau >= 0, "tau >= 0"),
            (0 <= self.epsilon <= MAX_EPSILON, f"0 <= epsilon <= {MAX_EPSILON}"),
            (self.theta > 0 or self.nu > 0, "theta > 0 or nu > 0"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"GaussianModelParams: invariant {what} violated ({self})")

    @classmethod
    def from_xi(cls, lam, theta, xi, epsilon, tau, sigma=1.0) -> "GaussianModelParams":
        """Build from the noise ratio xi = nu^2 / (sigma^2 / lam)."""
        if xi < 0:
            raise ValueError(f"xi must be non-negative, got {xi}")
        return cls(lam, sigma, theta, math.sqrt(xi * sigma**2 / lam), epsilon, tau)

    @classmethod
    def defaults(cls) -> "GaussianModelParams":
        return cls.from_xi(lam=0.03162, theta=0.6, xi=1e-4, epsilon=0.0505, tau=66.0)

    @property
    def xi(self) -> float:
        return self.nu**2 * self.lam / self.sigma**2

    @property
    def p_bar(self) -> float:
        return self.epsilon / self.theta if self.theta > 0 else math.inf

    @property
    def ou(self) -> OuParams:
        return OuParams(self.lam, self.sigma)


def _check_h(h):
    h = np.asarray(h, float)
    if np.any(~(h > 0)):
        raise ValueError(f"horizon h must be positive, got {h}")
    return h


def _momentum_bracket(h, lam, tau):
    return (
        1.0
        - np.exp(-lam * h)
        - math.exp(-lam * tau)
        + 0.5 * np.exp(-lam * (h + tau))
        + 0.5 * np.exp(-lam * np.abs(h - tau))
    )


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def c_diag(h, p: GaussianModelParams):
    """Variance of an h-return, c11(h) = c22(h) = (sigma theta)^2/lam (1 - e^{-lam h}) + nu^2 h."""
    h = _check_h(h)
    return _scalar(p.sigma**2 * p.theta**2 / p.lam * -np.expm1(-p.lam * h) + p.nu**2 * h)


def c_cross_over_2eps(h, p: GaussianModelParams):
    """Cross-covariance of h-returns divided by 2 epsilon."""
    h = _check_h(h)
    inv = p.sigma**2 / p.lam
    return _scalar(
        inv * p.theta**2 * _momentum_bracket(h, p.lam, p.tau) + p.nu**2 * np.minimum(h, p.tau)
    )


def rho_closed_form(h, p: GaussianModelParams):
    """First-order cross-correlation of h-returns (scalar or array h)."""
    h = _check_h(h)
    th2 = p.theta**2
    num = th2 * _momentum_bracket(h, p.lam, p.tau) + p.xi * np.minimum(h, p.tau)
    den = th2 * -np.expm1(-p.lam * h) + p.xi * h
    return _scalar(2.0 * p.epsilon * num / den)


def rho_curve(h_grid, p: GaussianModelParams) -> CorrelationCurve:
    h = np.asarray(h_grid, float)
    if h.ndim != 1 or h.size == 0:
        raise ValueError("rho_curve: horizon grid must be a non-empty 1-d array")
    if np.any(np.diff(h) <= 0):
        raise ValueError("rho_curve: horizon grid must be strictly ascending")
    rho = np.atleast_1d(rho_closed_form(h, p))
    na = np.full(h.shape, np.nan)
    return CorrelationCurve(h, rho, na, na.copy(), na.copy())


def lag_steps(tau: float, dt: float) -> int:
    lag = round(tau / dt)
    if abs(lag * dt - tau) > 1e-9 * max(1.0, tau):
        raise ValueError(f"dt={dt} does not divide tau={tau}")
    return lag


def simulate_prices(p: GaussianModelParams, grid: PathGrid) -> tuple[PriceSeries, PriceSeries]:
    """Price paths of the first-order model on ``grid``.

    s^k_t = theta X^k_t + nu Z^k_t
            + eps sum_j [theta (X^j_t - X^j_{t-tau}) + nu (Z^j_t - Z^j_{t-tau})].

    The four drivers are sampled on [-tau, T] from independent streams so the
    lagged terms exist from t = 0; X starts in its stationary law.
    """
    lag = lag_steps(p.tau, grid.dt)
    ext = PathGrid(grid.dt, grid.n_steps + lag, grid.seed)
    # driver k: theta X^k + nu Z^k, all four paths independent
    drivers = []
    for k in (1, 2):
        x = sample_ou_path(p.ou, ext, stream=f"gaussian.X{k}").values
        x *= p.theta
        x += sample_bm_path(p.nu, ext, stream=f"gaussian.Z{k}").values
        drivers.append(x)
    common = drivers[0] + drivers[1]
    momentum = common[lag:] - common[: len(common) - lag]
    momentum *= p.epsilon
    del common
    out = []
    for d in drivers:
        s = d[lag:] + momentum
        out.append(PriceSeries(0, grid.dt, s))
    return out[0], out[1]


def mc_correlation_curve(
    p: GaussianModelParams, grid: PathGrid, h_grid, n_batches: int = 50
) -> CorrelationCurve:
    """Monte Carlo rho(h) from ``simulate_prices`` with batch-means standard errors.

    Extra columns: ``mc_se`` (std of per-batch estimates / sqrt(n_batches)) and
    ``rho_closed_form``.
    """
    if n_batches < 2:
        raise ValueError("need at least 2 batches for a standard error")
    s1, s2 = simulate_prices(p, grid)
    curve = correlation_curve(s1, s2, h_grid, ci_mode="blocked", returns="simple")
    se = []
    for h in curve.h:
        a = simple_returns(s1, h).values
        b = simple_returns(s2, h).values
        edges = np.linspace(0, len(a), n_batches + 1).astype(int)
        per_batch = [_pearson(a[i:j], b[i:j]) for i, j in zip(edges[:-1], edges[1:])]
        se.append(np.std(per_batch, ddof=1) / math.sqrt(n_batches))
    curve.extra["mc_se"] = np.array(se)
    curve.extra["rho_closed_form"] = np.atleast_1d(rho_closed_form(curve.h, p))
    return curve
