"""Discrete-time three-agent market on two assets.

Each step, per asset:

1. the market maker quotes Avellaneda-Stoikov half-spreads around the mid,
   skewed by its inventory q_mm = -(q_n + q_m);
2. the noise trader is filled at the ask / bid with Poisson counts of
   intensity A exp(-k delta) (ask fills raise q_n by psi_n);
3. the momentum trader compares the normalised two-asset index with its
   tau moving average and steps its capped position by psi_m;
4. the mid moves by theta * (change in q_n + q_m) plus N(0, nu^2 dt) noise and
   is published rounded to the tick grid.

The loop runs in a numba kernel built from the same scalar rules that the
public step functions expose.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .analysis import PriceSeries
from .stochastic import make_rng

log = logging.getLogger(__name__)

_CHUNK = 1 << 17
_TICK_EPS = 1e-9


class SimulationAborted(RuntimeError):
    def __init__(self, step: int, asset: int, price: float):
        super().__init__(
            f"simulation aborted at step {step}: published mid of asset {asset + 1} "
            f"would be {price!r} (must stay positive)"
        )
        self.step = step
        self.asset = asset


@dataclass(frozen=True)
class AssetParams:
    eta: float  # tick size
    A: float  # arrival intensity at zero spread, 1/s
    k: float  # intensity decay per unit of half-spread
    theta: float  # linear impact per unit of inventory
    nu: float  # mid noise, price/sqrt(s)
    gamma: float  # market-maker risk aversion
    psi_n: float  # noise trade size
    s0: float  # initial mid

    def __post_init__(self):
        checks = [
            (self.eta > 0, "eta > 0"),
            (self.A > 0, "A > 0"),
            (self.k > 0, "k > 0"),
            (self.theta >= 0, "theta >= 0"),
            (self.nu >= 0, "nu >= 0"),
            (self.gamma > 0, "gamma > 0"),
            (self.psi_n > 0, "psi_n > 0"),
            (self.s0 > 0, "s0 > 0"),
        ]
        for ok, what in checks:
            if not ok:
                raise ValueError(f"AssetParams: invariant {what} violated ({self})")


@dataclass(frozen=True)
class MomentumParams:
    tau: float
    psi_m: tuple[float, float]
    q_max: tuple[float, float]
    enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "psi_m", tuple(float(x) for x in self.psi_m))
        object.__setattr__(self, "q_max", tuple(float(x) for x in self.q_max))
        if not self.tau > 0:
            raise ValueError(f"MomentumParams: invariant tau > 0 violated (tau={self.tau})")
        if len(self.psi_m) != 2 or len(self.q_max) != 2:
            raise ValueError("MomentumParams: psi_m and q_max need one entry per asset")
        for i in range(2):
            if not self.psi_m[i] > 0:
                raise ValueError(f"MomentumParams: invariant psi_m[{i}] > 0 violated")
            if not self.q_max[i] >= self.psi_m[i]:
                raise ValueError(f"MomentumParams: invariant q_max[{i}] >= psi_m[{i}] violated")


FITTED_ASSETS = (
    AssetParams(eta=1e-4, A=1.0, k=3466.0, theta=2.7e-11, nu=3e-5, gamma=6.46e-6, psi_n=100_000.0, s0=1.10),
    AssetParams(eta=1e-2, A=1.0, k=34.66, theta=2.7e-6, nu=2.04, gamma=3.47e-9, psi_n=4.0, s0=30_000.0),
)
FITTED_MOMENTUM = MomentumParams(tau=500.0, psi_m=(3_000_000.0, 120.0), q_max=(6_500_000.0, 250.0))


@dataclass(frozen=True)
class AbmConfig:
    """Full simulation setup.

    ``horizon`` replaces the (T - t) factor of the Avellaneda-Stoikov quotes
    with a constant, since the market never closes.
    """

    assets: tuple[AssetParams, AssetParams] = FITTED_ASSETS
    momentum: MomentumParams = FITTED_MOMENTUM
    dt: float = 0.5
    n_steps: int = 2_000_000
    seed: int = 0
    horizon: float = 1.0

    def __post_init__(self):
        if len(self.assets) != 2:
            raise ValueError("AbmConfig: exactly two assets are required")
        if not self.dt > 0:
            raise ValueError(f"AbmConfig: invariant dt > 0 violated (dt={self.dt})")
        if not self.horizon > 0:
            raise ValueError(f"AbmConfig: invariant horizon > 0 violated (horizon={self.horizon})")
        need = math.ceil(self.momentum.tau / self.dt - 1e-9)
        if int(self.n_steps) != self.n_steps or self.n_steps < need:
            raise ValueError(
                f"AbmConfig: invariant n_steps >= ceil(tau/dt) = {need} violated (n_steps={self.n_steps})"
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError("AbmConfig: seed must be an unsigned 64-bit integer")
        for i, a in enumerate(self.assets):
            if a.A * self.dt > 100:
                raise ValueError(f"AbmConfig: A*dt for asset {i + 1} must be <= 100")

    @property
    def window(self) -> int:
        """Moving-average length in steps."""
        return max(1, round(self.momentum.tau / self.dt))

    def with_momentum(self, enabled: bool) -> "AbmConfig":
        return replace(self, momentum=replace(self.momentum, enabled=enabled))


@dataclass
class AssetState:
    raw_mid: float
    mid: float
    q_n: float = 0.0
    q_m: float = 0.0
    delta_a: float = 0.0
    delta_b: float = 0.0

    @property
    def q_mm(self) -> float:
        return -(self.q_n + self.q_m)


@dataclass
class MarketState:
    assets: list[AssetState]
    index_history: list[float] = field(default_factory=list)
    step: int = 0

    @classmethod
    def initial(cls, cfg: AbmConfig) -> "MarketState":
        assets = []
        for a in cfg.assets:
            ticks = _round_ticks(a.s0, a.eta)
            assets.append(AssetState(raw_mid=a.s0, mid=ticks * a.eta))
        state = cls(assets)
        state.index_history.append(state.index(cfg))
        return state

    def index(self, cfg: AbmConfig) -> float:
        return sum(s.mid / a.s0 for s, a in zip(self.assets, cfg.assets))


# --------------------------------------------------------------------------- scalar rules (jitted)


@numba.njit(cache=True)
def _round_ticks(x, eta):
    return math.floor(x / eta + 0.5)


@numba.njit(cache=True)
def _poisson_from_uniform(mean, u):
    # inverse CDF; mean is small (A dt e^{-k delta})
    p = math.exp(-mean)
    c = p
    n = 0
    limit = int(mean + 20.0 * math.sqrt(mean) + 30.0)
    while u > c and n < limit:
        n += 1
        p *= mean / n
        c += p
    return n


@numba.njit(cache=True)
def _momentum_rule(prev_q, up, psi, q_max):
    if up:
        return min(max(prev_q, 0.0) + psi, q_max)
    return max(min(prev_q, 0.0) - psi, -q_max)


@numba.njit(cache=True)
def _as_total_spread(gamma, k, vol, horizon):
    return gamma * vol * vol * horizon + (2.0 / gamma) * math.log1p(gamma / k)


@numba.njit(cache=True)
def _quote_ticks(q_mm, gamma, k, eta, vol, horizon):
    """Ask and bid offsets from the mid in ticks, each at least one tick."""
    half = 0.5 * _as_total_spread(gamma, k, vol, horizon)
    skew = q_mm * gamma * vol * vol * horizon
    ask = max(math.ceil((half - skew) / eta - _TICK_EPS), 1.0)
    bid = max(math.ceil((half + skew) / eta - _TICK_EPS), 1.0)
    return ask, bid


# --------------------------------------------------------------------------- public step functions


def noise_trader_step(state: AssetState, a: AssetParams, dt: float, rng: np.random.Generator) -> float:
    """Noise-trader inventory change over one step: psi_n * (dN_ask - dN_bid)."""
    u_ask, u_bid = rng.random(), rng.random()
    n_ask = _poisson_from_uniform(a.A * math.exp(-a.k * state.delta_a) * dt, u_ask)
    n_bid = _poisson_from_uniform(a.A * math.exp(-a.k * state.delta_b) * dt, u_bid)
    return a.psi_n * (n_ask - n_bid)


def arrival_intensity(a: AssetParams, delta: float) -> float:
    """Fills per second at half-spread delta."""
    return a.A * math.exp(-a.k * delta)


def momentum_trader_step(
    prev_q: float, index_prev: float, ma_prev: float, m: MomentumParams, asset_index: int
) -> float:
    """New momentum inventory: step long (capped) above the moving average, short otherwise."""
    return _momentum_rule(prev_q, index_prev > ma_prev, m.psi_m[asset_index], m.q_max[asset_index])


def as_total_spread(a: AssetParams, vol_estimate: float, horizon: float = 1.0) -> float:
    """Avellaneda-Stoikov spread gamma vol^2 H + (2/gamma) ln(1 + gamma/k), before tick rounding."""
    return _as_total_spread(a.gamma, a.k, vol_estimate, horizon)


def market_maker_quotes(
    state: AssetState, a: AssetParams, vol_estimate: float, horizon: float = 1.0
) -> tuple[float, float]:
    """Half-spreads (delta_ask, delta_bid) around the published mid.

    Quotes sit at r +- spread/2 with reservation price r = mid - q_mm gamma vol^2 H,
    rounded outward to the tick grid and kept at least one tick from the mid.
    """
    if not vol_estimate > 0:
        raise ValueError(f"market_maker_quotes: vol_estimate must be positive, got {vol_estimate}")
    ask, bid = _quote_ticks(state.q_mm, a.gamma, a.k, a.eta, vol_estimate, horizon)
    return ask * a.eta, bid * a.eta


def price_update(
    state: AssetState, a: AssetParams, flow_delta: float, dt: float, rng: np.random.Generator
) -> tuple[float, float]:
    """New (raw, published) mid after linear impact theta * flow_delta and N(0, nu^2 dt) noise."""
    raw = state.raw_mid + a.theta * flow_delta + a.nu * math.sqrt(dt) * rng.standard_normal()
    published = _round_ticks(raw, a.eta) * a.eta
    if published <= 0:
        raise SimulationAborted(-1, -1, published)
    return raw, published


# --------------------------------------------------------------------------- kernel


@numba.njit(cache=True)
def _run_chunk(
    t_start, t_end, u, z,
    eta, A, k, theta, nu, gamma, psi_n, inv_s0,
    psi_m, q_max, momentum_on, window, dt, horizon,
    raw, ticks, qn, qm, tick_sums,
    out_ticks, out_qn, out_qm, record, status,
):
    sqdt = math.sqrt(dt)
    new_qm = np.empty(2)
    for t in range(t_start, t_end):
        j = t - t_start
        # moving average of the index over the last `window` published samples
        new_qm[0] = qm[0]
        new_qm[1] = qm[1]
        if momentum_on and t - 1 >= window - 1:
            # sign of window * (index - MA), from exact integer tick differences
            dev = (window * ticks[0] - tick_sums[0]) * eta[0] * inv_s0[0] + (
                window * ticks[1] - tick_sums[1]
            ) * eta[1] * inv_s0[1]
            up = dev > 0.0
            for i in range(2):
                new_qm[i] = _momentum_rule(qm[i], up, psi_m[i], q_max[i])
        for i in range(2):
            q_mm = -(qn[i] + qm[i])
            da, db = _quote_ticks(q_mm, gamma[i], k[i], eta[i], nu[i], horizon)
            n_ask = _poisson_from_uniform(A[i] * math.exp(-k[i] * da * eta[i]) * dt, u[j, 2 * i])
            n_bid = _poisson_from_uniform(A[i] * math.exp(-k[i] * db * eta[i]) * dt, u[j, 2 * i + 1])
            dqn = psi_n[i] * (n_ask - n_bid)
            flow = dqn + (new_qm[i] - qm[i])
            qn[i] += dqn
            raw[i] = raw[i] + theta[i] * flow + nu[i] * sqdt * z[j, i]
            ticks[i] = _round_ticks(raw[i], eta[i])
            if ticks[i] <= 0:
                status[0] = t
                status[1] = i
                return
            if qn[i] + new_qm[i] + (-(qn[i] + new_qm[i])) != 0.0:
                status[2] += 1
            if abs(new_qm[i]) > q_max[i]:
                status[3] += 1
        qm[0] = new_qm[0]
        qm[1] = new_qm[1]
        for i in range(2):
            out_ticks[t, i] = ticks[i]
            tick_sums[i] += ticks[i]
            if t >= window:
                tick_sums[i] -= out_ticks[t - window, i]
            if record:
                out_qn[t, i] = qn[i]
                out_qm[t, i] = qm[i]


@dataclass
class AbmResult:
    """Published mids per asset plus inventory traces (rows = steps 0..n)."""

    config: AbmConfig
    prices: tuple[PriceSeries, PriceSeries]
    q_n: np.ndarray | None
    q_m: np.ndarray | None
    checks: dict

    @property
    def q_mm(self) -> np.ndarray | None:
        if self.q_n is None:
            return None
        return -(self.q_n + self.q_m)

    @property
    def mid_ticks(self) -> np.ndarray:
        eta = np.array([a.eta for a in self.config.assets])
        return np.rint(np.column_stack([p.mids for p in self.prices]) / eta).astype(np.int64)


def run_simulation(cfg: AbmConfig, record_inventory: bool = True) -> AbmResult:
    """Run the market for ``cfg.n_steps`` steps; deterministic per ``cfg.seed``.

    Raises SimulationAborted if a published mid reaches zero or below.
    """
    for i, a in enumerate(cfg.assets):
        if not a.nu > 0:
            raise ValueError(f"run_simulation: asset {i + 1} needs nu > 0 as the market maker's vol estimate")
    col = lambda name: np.array([getattr(a, name) for a in cfg.assets], dtype=float)  # noqa: E731
    eta = col("eta")
    n = int(cfg.n_steps)
    out_ticks = np.zeros((n + 1, 2), dtype=np.int64)
    rec = bool(record_inventory)
    out_qn = np.zeros((n + 1, 2) if rec else (1, 2))
    out_qm = np.zeros((n + 1, 2) if rec else (1, 2))

    raw = col("s0")
    ticks = np.array([_round_ticks(raw[i], eta[i]) for i in range(2)], dtype=np.int64)
    out_ticks[0] = ticks
    qn = np.zeros(2)
    qm = np.zeros(2)
    tick_sums = ticks.copy()
    status = np.array([-1, -1, 0, 0], dtype=np.int64)

    flow_rng = make_rng(cfg.seed, "abm.noise_trader")
    price_rng = make_rng(cfg.seed, "abm.mid_noise")
    m = cfg.momentum
    for start in range(1, n + 1, _CHUNK):
        stop = min(start + _CHUNK, n + 1)
        u = flow_rng.random((stop - start, 4))
        z = price_rng.standard_normal((stop - start, 2))
        _run_chunk(
            start, stop, u, z,
            eta, col("A"), col("k"), col("theta"), col("nu"), col("gamma"), col("psi_n"), 1.0 / col("s0"),
            np.array(m.psi_m), np.array(m.q_max), bool(m.enabled), cfg.window, float(cfg.dt), float(cfg.horizon),
            raw, ticks, qn, qm, tick_sums,
            out_ticks, out_qn, out_qm, rec, status,
        )
        if status[0] >= 0:
            i = int(status[1])
            raise SimulationAborted(int(status[0]), i, float(ticks[i] * eta[i]))

    prices = tuple(PriceSeries(0, cfg.dt, out_ticks[:, i] * eta[i]) for i in range(2))
    checks = {
        "conservation_violations": int(status[2]),
        "cap_violations": int(status[3]),
        "final_q_n": qn.tolist(),
        "final_q_m": qm.tolist(),
    }
    log.info("abm run finished: %s", checks)
    return AbmResult(cfg, prices, out_qn if rec else None, out_qm if rec else None, checks)
