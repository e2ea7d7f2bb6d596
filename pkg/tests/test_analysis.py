import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from eppslab.analysis import (
    CorrelationCurve,
    DegenerateInputError,
    IngestionError,
    PriceSeries,
    QuoteRecord,
    QuoteTable,
    ReturnSeries,
    common_grid,
    correlation_curve,
    cross_correlation,
    filter_weekends,
    fisher_ci,
    load_quotes,
    log_returns,
    parse_h_grid,
    to_mid_series,
    weekday_utc,
)
from eppslab.stochastic import make_rng

US = 1_000_000


def epoch_us(*args) -> int:
    return int(dt.datetime(*args, tzinfo=dt.timezone.utc).timestamp()) * US


def write_quotes(path, rows, header="timestamp_us,bid,ask"):
    lines = [header] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def returns(values, h=1.0):
    return ReturnSeries(h, round(h), np.asarray(values, float))


def correlated_prices(rho, n, seed, dt_s=1.0):
    rng = make_rng(seed, "correlated-fixture")
    z = rng.standard_normal((n, 2))
    z[:, 1] = rho * z[:, 0] + math.sqrt(1 - rho * rho) * z[:, 1]
    logp = np.vstack([np.zeros(2), np.cumsum(1e-4 * z, axis=0)])
    return (PriceSeries(0, dt_s, 100 * np.exp(logp[:, 0])), PriceSeries(0, dt_s, 30000 * np.exp(logp[:, 1])))


# --------------------------------------------------------------------------- ingestion


def test_load_empty_file_with_header(tmp_path, caplog):
    q = load_quotes(write_quotes(tmp_path / "e.csv", []))
    assert len(q) == 0 and q.n_rejected == 0
    assert not caplog.records


def test_load_three_rows_exact(tmp_path):
    rows = [(1600000000000000, 1.1, 1.1002), (1600000000500000, 1.1001, 1.1003), (1600000001000000, 1.1, 1.1)]
    q = load_quotes(write_quotes(tmp_path / "q.csv", rows))
    assert list(q) == [QuoteRecord(*r) for r in rows]


def test_crossed_quote_rejected_and_counted(tmp_path, caplog):
    rows = [(i, 1.0, 1.1) for i in range(200)] + [(200, 1.2, 1.1)]
    q = load_quotes(write_quotes(tmp_path / "q.csv", rows))
    assert len(q) == 200 and q.n_rejected == 1
    assert "rejected 1 of 201" in caplog.text


def test_too_many_malformed_rows_is_fatal(tmp_path):
    rows = [(0, 1.0, 1.1), (1, "x", 1.1), (2, 1.0, 1.1)]
    with pytest.raises(IngestionError, match="line 3"):
        load_quotes(write_quotes(tmp_path / "q.csv", rows))


def test_load_errors(tmp_path):
    with pytest.raises(IngestionError, match="cannot read"):
        load_quotes(tmp_path / "missing.csv")
    with pytest.raises(IngestionError, match="header"):
        load_quotes(write_quotes(tmp_path / "h.csv", [(0, 1, 2)], header="t,b,a"))


def test_weekend_boundaries():
    sat = epoch_us(2021, 1, 2, 0, 0, 0)
    fri = epoch_us(2021, 1, 1, 23, 59, 59)
    q = QuoteTable.from_records([QuoteRecord(fri, 1.0, 1.0), QuoteRecord(sat, 1.0, 1.0)])
    kept = filter_weekends(q)
    assert kept.timestamp_us.tolist() == [fri]


def test_week_fixture_keeps_monday_to_friday():
    start = epoch_us(2021, 3, 1)  # a Monday
    ts = start + np.arange(0, 14 * 24) * 3600 * US
    q = QuoteTable(ts, np.ones(ts.size), np.ones(ts.size))
    kept = filter_weekends(q).timestamp_us
    expected = [t for t in ts.tolist() if dt.datetime.fromtimestamp(t / US, dt.timezone.utc).weekday() < 5]
    assert kept.tolist() == expected
    assert len(expected) == 10 * 24


@given(st.integers(0, 4_000_000_000 * US))
def test_weekday_matches_datetime(t):
    assert weekday_utc(np.array([t]))[0] == dt.datetime.fromtimestamp(t // US, dt.timezone.utc).weekday()


def test_mid_and_locf():
    q = QuoteTable.from_records([QuoteRecord(10 * US, 1.0, 1.2)])
    s = to_mid_series(q, 1.0, t0_us=10 * US, n=5)
    assert s.mids.tolist() == pytest.approx([1.1] * 5)
    assert s.t0_us == 10 * US


def test_leading_points_before_first_quote_dropped():
    q = QuoteTable.from_records([QuoteRecord(10 * US, 1.0, 1.2)])
    s = to_mid_series(q, 1.0, t0_us=7 * US, n=6)
    assert s.t0_us == 10 * US and len(s) == 3


def test_interleaved_files_align():
    a = QuoteTable.from_records([QuoteRecord(t * US + 300_000, 1.0 + t, 1.0 + t) for t in range(0, 20, 2)])
    b = QuoteTable.from_records([QuoteRecord(t * US + 700_000, 5.0 + t, 5.0 + t) for t in range(1, 21, 2)])
    t0, n = common_grid([a, b], 1.0)
    sa, sb = (to_mid_series(x, 1.0, t0_us=t0, n=n) for x in (a, b))
    assert len(sa) == len(sb) and sa.t0_us == sb.t0_us == 2 * US
    assert np.array_equal(sa.times_us, sb.times_us)


def test_gaps_split_series_and_returns_never_span_them():
    recs = [QuoteRecord(t * US, 100.0 + t, 100.0 + t) for t in range(10)]
    recs += [QuoteRecord((2000 + t) * US, 200.0 + t, 200.0 + t) for t in range(10)]
    s = to_mid_series(QuoteTable.from_records(recs), 1.0, max_gap=5.0)
    assert np.isfinite(s.mids[:15]).all() and np.isnan(s.mids[15:2000]).all()
    r = log_returns(s, 2.0)
    finite = np.flatnonzero(np.isfinite(r.values))
    # points 0..14 are fresh (last quote at 9s, 5s tolerance), then 2000..2009
    assert r.n_valid == (15 - 2) + (10 - 2)
    assert finite.max() + 2 < len(s)


@given(
    st.lists(st.tuples(st.integers(0, 50), st.floats(1.0, 2.0), st.floats(0.0, 0.5)), min_size=1, max_size=30)
)
@settings(max_examples=50)
def test_locf_never_invents_prices(rows):
    rows = sorted(rows, key=lambda r: r[0])
    recs = [QuoteRecord(t * US, b, b + w) for t, b, w in rows]
    s = to_mid_series(QuoteTable.from_records(recs), 1.0, max_gap=1e9)
    mids = {0.5 * (r.bid + r.ask) for r in recs}
    assert all(m in mids for m in s.mids.tolist())


# --------------------------------------------------------------------------- returns and estimator


def test_log_returns_examples():
    assert not log_returns(PriceSeries(0, 1.0, np.full(10, 3.0)), 2.0).values.any()
    assert log_returns(PriceSeries(0, 1.0, np.array([1.0, 1.5, 2.0])), 2.0).values[0] == pytest.approx(
        math.log(2), abs=1e-15
    )
    r = log_returns(PriceSeries(0, 0.5, np.array([100.0, 110.0, 121.0])), 1.0)
    assert r.values.tolist() == pytest.approx([math.log(1.21)], abs=1e-15)
    with pytest.raises(ValueError, match="multiple"):
        log_returns(PriceSeries(0, 1.0, np.ones(10)), 1.5)
    with pytest.raises(ValueError, match="short"):
        log_returns(PriceSeries(0, 1.0, np.ones(3)), 3.0)


def test_cross_correlation_examples():
    r = returns([0.1, -0.2, 0.05, 0.3, -0.1])
    assert cross_correlation(r, r) == pytest.approx(1.0, abs=1e-15)
    assert cross_correlation(r, returns(-r.values)) == pytest.approx(-1.0, abs=1e-15)
    assert cross_correlation(returns([1, 2, 3, 4]), returns([1, 2, 3, 5])) == pytest.approx(
        0.982707629823991, abs=1e-12
    )
    with pytest.raises(DegenerateInputError):
        cross_correlation(returns([1, 1, 1]), returns([1, 2, 3]))


@given(
    st.lists(st.tuples(st.floats(-1, 1), st.floats(-1, 1)), min_size=5, max_size=50),
    st.floats(0.01, 100),
    st.floats(-10, 10),
)
def test_estimator_invariance_symmetry_bounds(pairs, scale, shift):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    if a.std() < 1e-3 or b.std() < 1e-3:
        return
    r = cross_correlation(returns(a), returns(b))
    assert -1 <= r <= 1
    assert cross_correlation(returns(b), returns(a)) == pytest.approx(r, abs=1e-12)
    assert cross_correlation(returns(scale * a + shift), returns(b)) == pytest.approx(r, abs=1e-12)


def test_fisher_ci_examples():
    lo, hi = fisher_ci(0.0, 403, 0.95)
    assert lo == pytest.approx(-0.0976856863053, abs=1e-12) and hi == pytest.approx(0.0976856863053, abs=1e-12)
    lo, hi = fisher_ci(0.15, 10_000, 0.95)
    assert (lo, hi) == pytest.approx((0.130784437618, 0.169102905684), abs=1e-11)
    for bad in [(1.0, 100), (0.1, 3)]:
        with pytest.raises(ValueError):
            fisher_ci(*bad)


def test_fisher_ci_agrees_with_scipy():
    rng = make_rng(1, "fisher")
    x = rng.standard_normal(500)
    y = 0.4 * x + rng.standard_normal(500)
    res = stats.pearsonr(x, y)
    ci = res.confidence_interval(0.95)
    assert fisher_ci(res.statistic, 500) == pytest.approx((ci.low, ci.high), abs=1e-12)


@given(st.floats(-0.99, 0.99), st.integers(4, 10**6), st.integers(1, 1000))
def test_fisher_ci_brackets_and_shrinks(rho, n, dn):
    lo, hi = fisher_ci(rho, n)
    assert lo <= rho <= hi
    lo2, hi2 = fisher_ci(rho, n + dn)
    assert hi2 - lo2 < hi - lo


def test_fisher_ci_shrinks_to_point():
    widths = [np.diff(fisher_ci(0.0, n))[0] for n in (10, 10**3, 10**6, 10**9)]
    assert widths == sorted(widths, reverse=True) and widths[-1] < 1e-3


def test_curve_of_identical_series_is_one():
    p, _ = correlated_prices(0.3, 5000, 2)
    c = correlation_curve(p, p, [1.0, 5.0, 50.0])
    np.testing.assert_allclose(c.rho, 1.0, atol=1e-12)
    assert np.all(c.ci_low <= c.rho) and np.all(c.rho <= c.ci_high)


def test_independent_paths_uncorrelated():
    p1, p2 = correlated_prices(0.0, 1_000_000, 3)
    h = np.array([1.0, 2.0, 5.0, 10.0, 30.0, 60.0, 120.0, 300.0])
    c = correlation_curve(p1, p2, h)
    se = 1 / np.sqrt(c.n_effective - 3)
    assert np.all(np.abs(c.rho) < 3 * se)


def test_blocked_and_overlapping_counts():
    p1, p2 = correlated_prices(0.3, 10_000, 4)
    blocked = correlation_curve(p1, p2, [10.0], ci_mode="blocked")
    overl = correlation_curve(p1, p2, [10.0], ci_mode="overlapping")
    assert overl.n_effective[0] == 9_991 and blocked.n_effective[0] == 999
    assert blocked.rho[0] == overl.rho[0]
    with pytest.raises(ValueError):
        correlation_curve(p1, p2, [10.0], ci_mode="nope")


def test_curve_csv_roundtrip_and_format(tmp_path):
    c = CorrelationCurve([1.0, 2.5], [0.123456789012345, -0.5], [0.1, np.nan], [0.2, np.nan], [100, np.nan],
                         extra={"mc_se": [0.01, 0.02]})
    path = tmp_path / "c.csv"
    c.to_csv(path)
    text = path.read_bytes().decode()
    assert text.splitlines()[0] == "h_seconds,rho,ci_low,ci_high,n_effective,mc_se"
    assert text.splitlines()[1] == "1,0.123456789,0.1,0.2,100,0.01"
    assert text.splitlines()[2] == "2.5,-0.5,,,,0.02"
    assert "\r" not in text
    back = CorrelationCurve.read_csv(path)
    np.testing.assert_array_equal(back.h, c.h)
    assert np.isnan(back.ci_low[1]) and back.extra["mc_se"][1] == 0.02


def test_parse_h_grid():
    assert parse_h_grid("1:5:2").tolist() == [1.0, 3.0, 5.0]
    assert parse_h_grid("0.5,1,2").tolist() == [0.5, 1.0, 2.0]
    for bad in ("", "3,2", "0:5:1", "1:5"):
        with pytest.raises(ValueError):
            parse_h_grid(bad)
