"""Synthetic quote files in the ``timestamp_us,bid,ask`` schema."""

import datetime as dt
import math

import numpy as np

from eppslab.stochastic import make_rng

US = 1_000_000
MONDAY = int(dt.datetime(2021, 3, 1, tzinfo=dt.timezone.utc).timestamp()) * US


def correlated_mids(n, rho, seed, vol=(2e-5, 1e-4), s0=(1.1, 30000.0)):
    """Two log-price random walks whose per-step increments have correlation rho."""
    rng = make_rng(seed, "quote-fixture")
    z = rng.standard_normal((n - 1, 2))
    z[:, 1] = rho * z[:, 0] + math.sqrt(1 - rho * rho) * z[:, 1]
    logp = np.vstack([np.zeros(2), np.cumsum(z * np.array(vol), axis=0)])
    return s0[0] * np.exp(logp[:, 0]), s0[1] * np.exp(logp[:, 1])


def write_quote_file(path, ts_us, mids, half_spread):
    with open(path, "w") as fh:
        fh.write("timestamp_us,bid,ask\n")
        for t, m in zip(ts_us.tolist(), mids.tolist()):
            fh.write(f"{t},{m - half_spread!r},{m + half_spread!r}\n")
    return path


def write_pair(tmp_path, n=100_000, rho=0.3, seed=0, start_us=MONDAY, step_us=US):
    ts = start_us + step_us * np.arange(n, dtype=np.int64)
    m1, m2 = correlated_mids(n, rho, seed)
    return (
        write_quote_file(tmp_path / "eurusdt.csv", ts, m1, 5e-5),
        write_quote_file(tmp_path / "btcusdt.csv", ts, m2, 0.005),
    )
