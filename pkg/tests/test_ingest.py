import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voltail import ingest as ing
from voltail.density import closed_form_stationary
from voltail.estimators import hill
from voltail.experiments import synthetic_segments
from voltail.model import ModelParams, VolModel
from voltail.tails import hill_target, tail_quadrature

MIN = 60_000_000
MPY = 98280.0


def minute_series(prices, start_us=1_700_000_000 * 1_000_000):
    t = start_us + MIN * np.arange(len(prices), dtype=np.int64)
    return ing.PriceSeries(t, np.asarray(prices, dtype=float))


def test_parse_round_trip():
    s = minute_series(100 + np.arange(5.0))
    back = ing.parse_prices(ing.format_prices(s.t_us, s.prices))
    np.testing.assert_array_equal(back.t_us, s.t_us)
    np.testing.assert_array_equal(back.prices, s.prices)


def test_parse_timezones():
    a = ing.parse_prices("timestamp,price\n2024-01-02T10:00:00+01:00,1\n2024-01-02T09:01:00Z,2\n")
    assert a.t_us[1] - a.t_us[0] == MIN
    b = ing.parse_prices("timestamp,price\n2024-01-02 09:00:00,1\n2024-01-02 09:00:00.500,2\n")
    assert b.t_us[1] - b.t_us[0] == 500_000


def test_bad_rows_reported_with_line_numbers():
    text = ("timestamp,price\n2024-01-02T09:00:00Z,1\nyesterday,2\n"
            "2024-01-02T09:02:00Z,-3\n2024-01-02T09:03:00Z,4,5\n")
    with pytest.raises(ing.IngestError) as exc:
        ing.parse_prices(text)
    msg = str(exc.value)
    assert "line 3" in msg and "line 4" in msg and "line 5" in msg and "line 2" not in msg


def test_structural_errors():
    with pytest.raises(ing.IngestError, match="header"):
        ing.parse_prices("time,px\n")
    with pytest.raises(ing.IngestError):
        ing.parse_prices("")
    with pytest.raises(ing.IngestError, match="increasing"):
        ing.parse_prices("timestamp,price\n2024-01-02T09:00:00Z,1\n2024-01-02T09:00:00Z,2\n")


def test_constant_series_skipped_with_warning():
    s = minute_series(np.full(20_000, 50.0))
    with pytest.warns(ing.IngestWarning, match="zero"):
        res = ing.ingest(s, [5.0], MPY)
    assert res[0].skipped and res[0].hill is None and res[0].n_returns == 4000 - 1


def test_short_series_skipped():
    s = minute_series(100 * np.exp(np.cumsum(np.random.default_rng(0).normal(0, 1e-3, 500))))
    with pytest.warns(ing.IngestWarning, match="fit skipped"):
        assert ing.ingest(s, [5.0], MPY)[0].skipped


def test_single_gap_excludes_one_return():
    p = 100 * np.exp(np.cumsum(np.random.default_rng(1).normal(0, 1e-3, 200)))
    t = MIN * np.arange(200, dtype=np.int64)
    t[101:] += 7 * MIN  # one 8-minute interval starting on a grid point
    s = ing.resample_returns(ing.PriceSeries(t, p), 5.0)
    # [100, 105] lies inside the hole (empty); [105, 110] straddles it (excluded)
    assert s.n_excluded == 1 and s.n_empty == 1
    # the rest are genuine 5-minute returns
    full = ing.resample_returns(ing.PriceSeries(MIN * np.arange(200, dtype=np.int64), p), 5.0)
    assert s.returns.size + s.n_excluded + s.n_empty == (t[-1] - t[0]) // (5 * MIN)
    assert np.isin(s.returns[:19], full.returns).all()


def test_gap_threshold_configurable():
    p = 100 + np.arange(40.0)
    t = MIN * np.arange(40, dtype=np.int64)
    t[20:] += 2 * MIN
    assert ing.resample_returns(ing.PriceSeries(t, p), 5.0).n_excluded == 0
    # the 3-minute interval (19, 22) touches the returns [15, 20] and [20, 25]
    assert ing.resample_returns(ing.PriceSeries(t, p), 5.0, max_gap_minutes=2.0).n_excluded == 2


@given(st.integers(-10 ** 6, 10 ** 6))
@settings(max_examples=25)
def test_time_shift_invariance(shift_min):
    p = 100 * np.exp(np.cumsum(np.random.default_rng(2).normal(0, 1e-3, 300)))
    s = minute_series(p)
    a = ing.resample_returns(s, 10.0).returns
    b = ing.resample_returns(s.shifted(shift_min + 0.25), 10.0).returns
    np.testing.assert_array_equal(a, b)


def test_mean_subtraction_and_overlap():
    p = 100 * np.exp(0.001 * np.arange(100))
    s = minute_series(p)
    r = ing.resample_returns(s, 5.0, subtract_mean=True)
    assert abs(r.returns.mean()) < 1e-15 and r.mean_removed == pytest.approx(0.005)
    o = ing.resample_returns(s, 5.0, overlapping=True)
    assert o.returns.size == 95 and o.overlapping
    res = ing.ingest(minute_series(100 * np.exp(np.cumsum(
        np.random.default_rng(3).standard_t(3, 20_000) * 1e-3))), [5.0], MPY, overlapping=True)
    assert any("overlapping" in n for n in res[0].notes)


def test_pareto_returns():
    # one-minute returns with symmetric Pareto(3) magnitudes, read at dt = 1 min
    rng = np.random.default_rng(4)
    x = rng.choice([-1.0, 1.0], 1_000_000) * (1 - rng.random(1_000_000)) ** (-1 / 3) * 1e-4
    s = minute_series(100 * np.exp(np.cumsum(x)))
    r = ing.ingest(s, [1.0], MPY)[0]
    assert abs(r.hill.estimate - 3) < 0.1
    assert r.curve.source == "empirical" and r.loglog is not None
    assert abs(r.loglog.estimate + 3) < 0.15


def closed_loop(seed, n):
    p = ModelParams()
    m = VolModel(p)
    t, prices = synthetic_segments(m, 5.0, n, MPY, seed=seed)
    series = ing.parse_prices(ing.format_prices(t, prices))
    res = ing.ingest(series, [5.0], MPY)[0]
    dt = 5.0 / MPY
    a = np.sort(np.abs(ing.resample_returns(series, 5.0).returns))[::-1]
    thr = float(a[res.hill.n_used])
    x = math.sqrt(p.r0 * dt) * np.logspace(-1, 3, 200)
    target = hill_target(tail_quadrature(closed_form_stationary(p), dt, x), thr)
    return res, target


def test_closed_loop_coverage():
    z = []
    for seed in range(4):
        res, target = closed_loop(100 + seed, 20_000)
        assert res.n_returns == 20_000
        z.append((res.hill.estimate - target) / res.hill.stderr)
    # four draws from roughly N(0, 1): none beyond the 99.9% band
    assert np.max(np.abs(z)) < 3.3, z
