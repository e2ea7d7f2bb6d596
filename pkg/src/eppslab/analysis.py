"""Empirical cross-correlation pipeline for two quote feeds.

Ingestion (``timestamp_us,bid,ask`` CSV), weekend removal, mid prices
resampled onto a uniform grid, overlapping horizon-h returns, the Pearson
cross-correlation estimator and Fisher-z confidence bands.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy import stats

log = logging.getLogger(__name__)

QUOTE_HEADER = ("timestamp_us", "bid", "ask")
CURVE_HEADER = ("h_seconds", "rho", "ci_low", "ci_high", "n_effective")
US_PER_SECOND = 1_000_000
US_PER_DAY = 86_400 * US_PER_SECOND


class IngestionError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class QuoteRecord(NamedTuple):
    timestamp_us: int
    bid: float
    ask: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)


@dataclass
class QuoteTable:
    """Columnar best bid/offer quotes, timestamps non-decreasing."""

    timestamp_us: np.ndarray
    bid: np.ndarray
    ask: np.ndarray
    n_rejected: int = 0
    source: str = ""

    def __len__(self) -> int:
        return len(self.timestamp_us)

    def __iter__(self) -> Iterator[QuoteRecord]:
        for t, b, a in zip(self.timestamp_us.tolist(), self.bid.tolist(), self.ask.tolist()):
            yield QuoteRecord(t, b, a)

    def subset(self, mask: np.ndarray) -> "QuoteTable":
        return QuoteTable(
            self.timestamp_us[mask], self.bid[mask], self.ask[mask], self.n_rejected, self.source
        )

    @classmethod
    def from_records(cls, records: Sequence[QuoteRecord], source: str = "") -> "QuoteTable":
        if not records:
            return cls(np.empty(0, np.int64), np.empty(0), np.empty(0), 0, source)
        t, b, a = zip(*records)
        return cls(np.asarray(t, np.int64), np.asarray(b, float), np.asarray(a, float), 0, source)


@dataclass(frozen=True)
class PriceSeries:
    """Mid prices on the uniform grid ``t0_us + i * dt``.

    NaN marks grid points with no fresh quote (a gap); returns never span one.
    """

    t0_us: int
    dt: float
    mids: np.ndarray

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"PriceSeries: dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.mids)

    @property
    def times_us(self) -> np.ndarray:
        return self.t0_us + np.round(np.arange(len(self.mids)) * self.dt * US_PER_SECOND).astype(
            np.int64
        )


@dataclass(frozen=True)
class ReturnSeries:
    """Overlapping returns over horizon ``h``; ``values[i]`` ends at grid point ``i + lag``."""

    h: float
    lag: int
    values: np.ndarray

    @property
    def n_valid(self) -> int:
        return int(np.count_nonzero(np.isfinite(self.values)))


@dataclass
class CorrelationCurve:
    """Rows of (h, rho, ci_low, ci_high, n_effective) plus optional extra columns.

    NaN in a CI or count column means "not applicable" and is written as an
    empty CSV field.
    """

    h: np.ndarray
    rho: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_effective: np.ndarray
    extra: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.h = np.asarray(self.h, float)
        n = len(self.h)
        for name in ("rho", "ci_low", "ci_high", "n_effective"):
            arr = np.asarray(getattr(self, name), float)
            if arr.shape != (n,):
                raise ValueError(f"CorrelationCurve: column {name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)
        self.extra = {k: np.asarray(v, float) for k, v in self.extra.items()}
        if n > 1 and not np.all(np.diff(self.h) > 0):
            raise ValueError("CorrelationCurve: h must be strictly ascending")

    def __len__(self) -> int:
        return len(self.h)

    @property
    def columns(self) -> list[str]:
        return list(CURVE_HEADER) + list(self.extra)

    def column(self, name: str) -> np.ndarray:
        if name == "h_seconds":
            return self.h
        if name in CURVE_HEADER:
            return getattr(self, name)
        return self.extra[name]

    def to_csv(self, path: str | Path) -> None:
        cols = [self.column(c) for c in self.columns]
        is_count = [c == "n_effective" for c in self.columns]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for i in range(len(self)):
                fields = [
                    _format_value(col[i], integer=cnt) for col, cnt in zip(cols, is_count)
                ]
                fh.write(",".join(fields) + "\n")

    @classmethod
    def read_csv(cls, path: str | Path) -> "CorrelationCurve":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(header[: len(CURVE_HEADER)]) != CURVE_HEADER:
                raise IngestionError(f"{path}: not a correlation curve file (header {header})")
            rows = [[float(v) if v != "" else math.nan for v in row] for row in reader if row]
        data = np.array(rows, float).reshape(-1, len(header))
        extra = {name: data[:, j] for j, name in enumerate(header) if j >= len(CURVE_HEADER)}
        return cls(*(data[:, j] for j in range(len(CURVE_HEADER))), extra=extra)


def _format_value(x: float, integer: bool = False) -> str:
    if not math.isfinite(x):
        return ""
    if integer:
        return str(int(x))
    return f"{x:.10g}"


# --------------------------------------------------------------------------- ingestion


def load_quotes(path: str | Path, max_malformed_fraction: float = 0.01) -> QuoteTable:
    """Parse a ``timestamp_us,bid,ask`` CSV file.

    Rows that fail to parse, carry non-positive prices, have ask < bid or go
    back in time are rejected and counted. More than ``max_malformed_fraction``
    rejected rows is a hard error listing the offending line numbers.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read quote file ({exc})") from exc

    ts: list[int] = []
    bids: list[float] = []
    asks: list[float] = []
    bad: list[tuple[int, str]] = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: missing header, expected {','.join(QUOTE_HEADER)}")
        if tuple(h.strip() for h in header) != QUOTE_HEADER:
            raise IngestionError(
                f"{path}:1: bad header {header!r}, expected {','.join(QUOTE_HEADER)}"
            )
        last_t = None
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                bad.append((lineno, f"expected 3 fields, got {len(row)}"))
                continue
            try:
                t = int(row[0])
                b = float(row[1])
                a = float(row[2])
            except ValueError as exc:
                bad.append((lineno, str(exc)))
                continue
            if not (b > 0 and a > 0 and math.isfinite(a) and math.isfinite(b)):
                bad.append((lineno, "non-positive price"))
            elif a < b:
                bad.append((lineno, f"ask {a} < bid {b}"))
            elif last_t is not None and t < last_t:
                bad.append((lineno, "timestamp goes backwards"))
            else:
                ts.append(t)
                bids.append(b)
                asks.append(a)
                last_t = t

    total = len(ts) + len(bad)
    if bad:
        log.warning("%s: rejected %d of %d rows", path, len(bad), total)
        if len(bad) > max_malformed_fraction * total:
            shown = "; ".join(f"line {n}: {why}" for n, why in bad[:20])
            more = f" (+{len(bad) - 20} more)" if len(bad) > 20 else ""
            raise IngestionError(
                f"{path}: {len(bad)}/{total} malformed rows exceeds "
                f"{max_malformed_fraction:.0%}: {shown}{more}"
            )
    return QuoteTable(
        np.asarray(ts, np.int64), np.asarray(bids, float), np.asarray(asks, float), len(bad), str(path)
    )


def weekday_utc(timestamp_us: np.ndarray) -> np.ndarray:
    """Monday=0 ... Sunday=6 for epoch-microsecond timestamps."""
    days = np.floor_divide(np.asarray(timestamp_us, np.int64), US_PER_DAY)
    return (days + 3) % 7  # 1970-01-01 was a Thursday


def filter_weekends(quotes: QuoteTable) -> QuoteTable:
    """Drop quotes stamped Saturday 00:00 UTC through Sunday 23:59:59.999999 UTC."""
    return quotes.subset(weekday_utc(quotes.timestamp_us) < 5)


def mask_weekend_points(series: PriceSeries) -> PriceSeries:
    """NaN out grid points on Saturday/Sunday so Friday quotes are not carried into the weekend."""
    mids = series.mids.copy()
    mids[weekday_utc(series.times_us) >= 5] = np.nan
    return PriceSeries(series.t0_us, series.dt, mids)


def _dt_us(dt: float) -> int:
    dt_us = round(dt * US_PER_SECOND)
    if dt_us <= 0 or abs(dt_us - dt * US_PER_SECOND) > 1e-6:
        raise ValueError(f"dt={dt} is not a positive whole number of microseconds")
    return dt_us


def common_grid(tables: Sequence[QuoteTable], dt: float) -> tuple[int, int]:
    """Start and length of the dt-grid covered by every table.

    Grid points are whole multiples of dt since the epoch, so independently
    resampled series line up.
    """
    dt_us = _dt_us(dt)
    if any(len(q) == 0 for q in tables):
        raise DegenerateInputError("cannot build a grid from an empty quote stream")
    start = max(int(q.timestamp_us[0]) for q in tables)
    stop = min(int(q.timestamp_us[-1]) for q in tables)
    t0 = -(-start // dt_us) * dt_us
    if stop < t0:
        raise DegenerateInputError("quote files do not overlap in time")
    return t0, (stop - t0) // dt_us + 1


def to_mid_series(
    quotes: QuoteTable,
    dt: float = 1.0,
    *,
    t0_us: int | None = None,
    n: int | None = None,
    max_gap: float = 600.0,
) -> PriceSeries:
    """Resample (bid + ask) / 2 onto a uniform grid by last observation carried forward.

    Grid points before the first quote are dropped; points whose latest quote
    is older than ``max_gap`` seconds become NaN.
    """
    if len(quotes) == 0:
        raise DegenerateInputError("to_mid_series: empty quote stream")
    dt_us = _dt_us(dt)
    if t0_us is None or n is None:
        g0, gn = common_grid([quotes], dt)
        t0_us = g0 if t0_us is None else t0_us
        n = gn if n is None else n
    grid = t0_us + dt_us * np.arange(n, dtype=np.int64)
    grid = grid[grid >= quotes.timestamp_us[0]]
    idx = np.searchsorted(quotes.timestamp_us, grid, side="right") - 1
    mids = 0.5 * (quotes.bid[idx] + quotes.ask[idx])
    stale = (grid - quotes.timestamp_us[idx]) > max_gap * US_PER_SECOND
    mids[stale] = np.nan
    start = int(grid[0]) if len(grid) else int(t0_us)
    return PriceSeries(start, dt, mids)


# --------------------------------------------------------------------------- returns and estimator


def _lag(series: PriceSeries, h: float) -> int:
    lag = round(h / series.dt)
    if lag < 1 or abs(lag * series.dt - h) > 1e-9 * max(1.0, h):
        raise ValueError(f"horizon h={h} is not a positive multiple of dt={series.dt}")
    if len(series) <= lag:
        raise ValueError(f"series of length {len(series)} too short for h={h}")
    return lag


def log_returns(series: PriceSeries, h: float) -> ReturnSeries:
    """r_h(t) = ln(P(t) / P(t - h)) at every grid point t >= t0 + h."""
    lag = _lag(series, h)
    p = series.mids
    if np.any(p[np.isfinite(p)] <= 0):
        raise ValueError("log_returns: prices must be strictly positive")
    with np.errstate(invalid="ignore"):
        lp = np.log(p)
    return ReturnSeries(h, lag, _segment_diff(lp, lag))


def simple_returns(series: PriceSeries, h: float) -> ReturnSeries:
    """s(t) - s(t - h); used for price levels that are not positive (Gaussian model)."""
    lag = _lag(series, h)
    return ReturnSeries(h, lag, _segment_diff(series.mids, lag))


def _segment_diff(x: np.ndarray, lag: int) -> np.ndarray:
    out = x[lag:] - x[:-lag]
    gaps = ~np.isfinite(x)
    if gaps.any():
        # a return is valid only if no gap lies between its endpoints
        seg = np.cumsum(gaps)
        out[seg[lag:] != seg[:-lag]] = np.nan
    return out


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    saa = float(np.dot(a, a))
    sbb = float(np.dot(b, b))
    if saa == 0.0 or sbb == 0.0:
        raise DegenerateInputError("cross_correlation: a return series has zero variance")
    return float(np.clip(np.dot(a, b) / math.sqrt(saa * sbb), -1.0, 1.0))


def paired_values(r1: ReturnSeries, r2: ReturnSeries) -> tuple[np.ndarray, np.ndarray]:
    if r1.lag != r2.lag or not math.isclose(r1.h, r2.h):
        raise ValueError(f"return horizons differ: {r1.h} vs {r2.h}")
    if len(r1.values) != len(r2.values):
        raise ValueError(f"return series lengths differ: {len(r1.values)} vs {len(r2.values)}")
    a, b = r1.values, r2.values
    ok = np.isfinite(a) & np.isfinite(b)
    if not ok.all():
        a, b = a[ok], b[ok]
    return a, b


def cross_correlation(r1: ReturnSeries, r2: ReturnSeries) -> float:
    """Time-averaged Pearson correlation of two aligned return series.

    Sample means are subtracted; pairs where either return is missing are skipped.
    """
    a, b = paired_values(r1, r2)
    if len(a) < 2:
        raise DegenerateInputError("cross_correlation: need at least 2 paired returns")
    return _pearson(a, b)


def fisher_ci(rho: float, n_effective: float, level: float = 0.95) -> tuple[float, float]:
    """Confidence interval for a correlation via z = atanh(rho), se = 1/sqrt(n - 3)."""
    if not abs(rho) < 1:
        raise ValueError(f"fisher_ci: |rho| must be < 1, got {rho}")
    if n_effective < 4:
        raise ValueError(f"fisher_ci: need n_effective >= 4, got {n_effective}")
    if not 0 < level < 1:
        raise ValueError(f"fisher_ci: level must lie in (0, 1), got {level}")
    z = math.atanh(rho)
    half = stats.norm.ppf(0.5 + level / 2) / math.sqrt(n_effective - 3)
    return math.tanh(z - half), math.tanh(z + half)


def effective_count(n_pairs: int, lag: int, ci_mode: str) -> int:
    """Sample size for the CI: whole non-overlapping blocks, or every overlapping pair."""
    if ci_mode == "blocked":
        return n_pairs // lag
    if ci_mode == "overlapping":
        return n_pairs
    raise ValueError(f"ci_mode must be 'blocked' or 'overlapping', got {ci_mode!r}")


def correlation_curve(
    p1: PriceSeries,
    p2: PriceSeries,
    h_grid: Sequence[float],
    ci_mode: str = "blocked",
    level: float = 0.95,
    returns: str = "log",
) -> CorrelationCurve:
    """Cross-correlation rho(h) of two aligned price series over a grid of horizons."""
    if p1.t0_us != p2.t0_us or len(p1) != len(p2) or p1.dt != p2.dt:
        raise ValueError("correlation_curve: price series are not on the same grid")
    h_grid = np.asarray(h_grid, float)
    if h_grid.size == 0:
        raise ValueError("correlation_curve: empty horizon grid")
    make = log_returns if returns == "log" else simple_returns
    rows = []
    for h in h_grid:
        r1, r2 = make(p1, h), make(p2, h)
        a, b = paired_values(r1, r2)
        if len(a) < 2:
            raise DegenerateInputError(f"correlation_curve: fewer than 2 returns at h={h}")
        rho = _pearson(a, b)
        n_eff = effective_count(len(a), r1.lag, ci_mode)
        lo, hi = curve_ci(rho, n_eff, level)
        rows.append((rho, lo, hi, n_eff))
    rho, lo, hi, n_eff = (np.array(c, float) for c in zip(*rows))
    return CorrelationCurve(h_grid, rho, lo, hi, n_eff)


def curve_ci(rho: float, n_eff: int, level: float = 0.95) -> tuple[float, float]:
    if abs(rho) >= 1.0 - 1e-12:
        return rho, rho
    if n_eff < 4:
        return math.nan, math.nan
    return fisher_ci(rho, n_eff, level)


def parse_h_grid(spec: str) -> np.ndarray:
    """``start:stop:step`` (inclusive of stop) or a comma list of horizons in seconds."""
    spec = spec.strip()
    if ":" in spec:
        parts = [float(x) for x in spec.split(":")]
        if len(parts) != 3:
            raise ValueError(f"h grid {spec!r}: expected start:stop:step")
        start, stop, step = parts
        if step <= 0 or start <= 0 or stop < start:
            raise ValueError(f"h grid {spec!r}: need 0 < start <= stop and step > 0")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        grid = start + step * np.arange(n)
    else:
        grid = np.array([float(x) for x in spec.split(",") if x.strip()])
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError(f"h grid {spec!r} must be non-empty, positive and strictly ascending")
    return grid
