import numpy as np
import pytest
from hypothesis import given, strategies as st

from voltail.estimators import (EstimatorError, acf, default_hill_k, empirical_ccdf, hill,
                                hill_curve, loglog_slope, vol_of_vol, wilson_interval)
from voltail.model import ModelParams, VolModel
from voltail.sim import SimSpec, simulate_volatility


def pareto(n, a, seed):
    u = np.random.default_rng(seed).random(n)
    return (1.0 - u) ** (-1.0 / a)


def test_hill_pareto3():
    fit = hill(pareto(10 ** 6, 3.0, 1), k=10 ** 4)
    assert abs(fit.estimate - 3.0) < 0.1
    assert fit.stderr == pytest.approx(fit.estimate / 100)


def test_hill_exact_order_statistics():
    n = 10 ** 5
    x = (n / np.arange(1, n + 1)) ** (1 / 3)
    assert hill(x, k=10_000).estimate == pytest.approx(3.0, abs=1e-2)


def test_hill_exponential_monotone_in_k():
    # light tail: the index estimate grows without bound as the threshold rises (k falls)
    x = np.random.default_rng(3).exponential(size=200_000)
    ks = np.array([100, 1000, 10_000, 50_000])
    h = hill_curve(x, ks)
    assert np.all(np.diff(h) < 0)


def test_hill_curve_matches_hill():
    x = pareto(5000, 2.0, 4)
    assert hill_curve(x, [200])[0] == pytest.approx(hill(x, k=200).estimate, rel=1e-12)


def test_hill_k_bounds():
    x = pareto(100, 3.0, 5)
    with pytest.raises(EstimatorError):
        hill(x, k=5)
    with pytest.raises(EstimatorError):
        hill(x, k=60)


def test_default_k():
    assert default_hill_k(10 ** 6) == 10 ** 4
    assert default_hill_k(1000) == 100


def test_hill_and_loglog_agree():
    x = pareto(10 ** 6, 3.0, 6)
    h = hill(x, k=10 ** 4)
    cc = empirical_ccdf(x, np.logspace(0, np.log10(np.quantile(x, 0.99)), 30))
    ll = loglog_slope(cc.x, cc.pbar)
    assert abs(-ll.estimate - h.estimate) <= 2 * np.hypot(ll.stderr, h.stderr) + 0.02


def test_loglog_exact_power():
    x = np.logspace(0, 3, 20)
    fit = loglog_slope(x, 7 * x ** -3.0)
    assert fit.estimate == pytest.approx(-3.0, abs=1e-12)
    assert fit.stderr < 1e-12
    assert np.exp(fit.intercept) == pytest.approx(7.0, rel=1e-10)


def test_loglog_perturbed():
    x = np.logspace(0, 4, 200)
    fit = loglog_slope(x, x ** -3 * (1 + 0.01 * np.sin(np.log(x))))
    assert abs(fit.estimate + 3) < 0.02


def test_loglog_rejects_narrow_window():
    x = np.logspace(0, 3, 20)
    with pytest.raises(EstimatorError):
        loglog_slope(x, x ** -3.0, (x[3], x[4]))


def test_loglog_nonpositive():
    x = np.arange(1.0, 11.0)
    y = -x
    with pytest.raises(EstimatorError):
        loglog_slope(x, y)


def test_acf_white_noise():
    n = 100_000
    z = np.random.default_rng(7).standard_normal(n)
    r = acf(z, np.arange(1, 20))
    assert np.all(np.abs(r) <= 3 / np.sqrt(n) * 1.5)
    assert acf(z, [0])[0] == pytest.approx(1.0)


def test_acf_ar1():
    n, phi = 10 ** 6, 0.9
    rng = np.random.default_rng(8)
    e = rng.standard_normal(n)
    from scipy.signal import lfilter
    x = lfilter([1.0], [1.0, -phi], e)
    assert acf(x, [1])[0] == pytest.approx(0.9, abs=0.01)


def test_acf_matches_direct():
    x = np.random.default_rng(9).standard_normal(500)
    xc = x - x.mean()
    direct = np.array([np.dot(xc[:500 - L], xc[L:]) for L in range(5)]) / np.dot(xc, xc)
    np.testing.assert_allclose(acf(x, np.arange(5)), direct, atol=1e-12)


def test_acf_constant():
    with pytest.raises(EstimatorError):
        acf(np.ones(100), [1])


@pytest.fixture(scope="module")
def long_path():
    m = VolModel(ModelParams())
    spec = SimSpec.default(m, n_paths=1, n_steps=2_000_000, seed=0)
    return simulate_volatility(m, spec).sigma_paths[0, 1:], spec.dt_sim


def test_acf_regression_band(long_path):
    # frozen from pilot runs (seeds 0-3): about 0.02-0.06 at one nominal
    # mean-reversion time 1/(A r0) and about 0.5 at three years
    s, dt = long_path
    r = acf(s, [int(round(25.0 / dt)), int(round(3.0 / dt))])
    assert 0.005 <= r[0] <= 0.12
    assert 0.35 <= r[1] <= 0.65


@pytest.mark.xfail(strict=True, reason="defaults decorrelate in ~3-4 yr; acf at the "
                   "price-fluctuation time sigma_rms^-2 (~29 yr) is ~0.03, not > 0.5")
def test_acf_at_price_fluctuation_time(long_path):
    from voltail.density import closed_form_stationary, moment
    s, dt = long_path
    lag = 1.0 / moment(closed_form_stationary(ModelParams()), 2)
    assert acf(s, [int(round(lag / dt))])[0] > 0.5


def test_vol_of_vol_no_diffusion():
    s = 0.2 * np.exp(-0.04 * np.arange(10_000) * 0.01)
    assert vol_of_vol(s, 1.0, 0.01) < 1e-6 * 100


def test_vol_of_vol_stable_across_seeds():
    m = VolModel(ModelParams())
    vals = []
    for seed in range(3):
        spec = SimSpec.default(m, n_paths=1, n_steps=1_000_000, seed=seed)
        vals.append(vol_of_vol(simulate_volatility(m, spec).sigma_paths[0, 1:], 1.0, spec.dt_sim))
    vals = np.array(vals)
    assert np.all(vals > 0)
    assert np.all(np.abs(vals / vals.mean() - 1) < 0.1)


def test_vol_of_vol_scales_with_sigma():
    out = []
    for r0 in (0.04, 0.16):
        m = VolModel(ModelParams(r0=r0))
        spec = SimSpec.default(m, n_paths=1, n_steps=1_000_000, seed=11, dt_sim=0.025 * 0.04 / r0)
        out.append(vol_of_vol(simulate_volatility(m, spec).sigma_paths[0, 1:], 0.25,
                              spec.dt_sim))
    assert 1.7 <= out[1] / out[0] <= 2.3


def test_vol_of_vol_short_path():
    with pytest.raises(EstimatorError):
        vol_of_vol(np.ones(10), 1.0, 0.5)


def test_ccdf_routes():
    x = np.random.default_rng(1).standard_normal(1000)
    nodes = np.linspace(0, 3, 31)
    cc = empirical_ccdf(x, nodes)
    naive = np.array([np.mean(np.abs(x) >= v) for v in nodes])
    np.testing.assert_array_equal(cc.pbar, naive)
    assert cc.pbar[0] == 1.0


def test_ccdf_empty():
    with pytest.raises(EstimatorError):
        empirical_ccdf([], [1.0])


@given(st.integers(0, 1000), st.integers(1, 1000))
def test_wilson_contains_estimate(k, n):
    k = min(k, n)
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1
