import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from voltail.density import DensityGrid, closed_form_stationary, inverse_cdf_sampler
from voltail.model import ModelParams
from voltail.sim import sample_returns_approx
from voltail.tails import (QuadratureError, TailCurve, TailError, asymptotic_constant,
                           asymptotic_tail, audited_window, c_integral, c_integral_riemann,
                           curve_from_counts, dt_scaling_fit, hill_target, mc_approx_tail,
                           return_pdf_quadrature, tail_exponent, tail_exponent_mle,
                           tail_from_pdf, tail_from_samples, tail_from_samples_naive,
                           tail_quadrature)

R0 = 0.04
MPY = 98280.0
DTS = np.array([5.0, 10.0, 30.0, 60.0, 120.0]) / MPY


def spike(s0=0.2, w=1e-3):
    s = s0 * np.exp(np.linspace(-12 * w, 12 * w, 401))
    fn = lambda x: stats.lognorm.pdf(x, w, scale=s0)
    return DensityGrid(s, fn(s), 1.0, "closed-form", q_fn=fn)


def y_nodes(dt, lo=0.1, hi=1000.0, per_decade=20):
    n = int(round(per_decade * math.log10(hi / lo))) + 1
    return np.logspace(math.log10(lo), math.log10(hi), n) * math.sqrt(R0 * dt)


def test_spike_gives_normal_pdf():
    x = np.linspace(0, 0.1, 21)
    p = return_pdf_quadrature(spike(), 0.01, x)
    ref = stats.norm.pdf(x, scale=0.02)
    assert np.max(np.abs(p - ref)) / ref.max() < 1e-3
    pbar = tail_quadrature(spike(), 0.01, x).pbar_values
    np.testing.assert_allclose(pbar, 2 * stats.norm.sf(x, scale=0.02), atol=1e-6)


def test_return_pdf_integrates_to_one(q_default):
    dt = DTS[0]
    f = lambda x: return_pdf_quadrature(q_default, dt, [x])[0]
    s = math.sqrt(R0 * dt)
    total = 0.0
    for a, b in ((0, s), (s, 10 * s), (10 * s, 1e3 * s), (1e3 * s, np.inf)):
        total += integrate.quad(f, a, b, epsrel=1e-10, limit=200)[0]
    assert abs(2 * total - 1) < 1e-6


def test_pdf_route_matches_quadrature(q_default):
    dt = DTS[2]
    x = np.concatenate([[0.0], y_nodes(dt, 0.01, 1000, 40)])
    p = return_pdf_quadrature(q_default, dt, x)
    a = tail_from_pdf(p, x, dt)
    b = tail_quadrature(q_default, dt, x)
    sel = (x > 0.1 * math.sqrt(R0 * dt)) & (x < 300 * math.sqrt(R0 * dt))
    np.testing.assert_allclose(a.pbar_values[sel], b.pbar_values[sel], rtol=2e-3)


def test_quadrature_at_zero_is_one(q_default):
    assert tail_quadrature(q_default, DTS[0], [0.0]).pbar_values[0] == pytest.approx(1, abs=1e-8)


def test_quadrature_slope_in_model_window(q_default):
    for dt in DTS[[0, -1]]:
        c = tail_quadrature(q_default, dt, y_nodes(dt))
        fit = tail_exponent(c, audited_window(c, R0))
        assert abs(fit.estimate + 3) < 0.10


def test_quadrature_monotone(q_default):
    c = tail_quadrature(q_default, DTS[1], y_nodes(DTS[1]))
    assert np.all(np.diff(c.pbar_values) <= 0) and np.all(c.pbar_values > 0)


def test_quadrature_errors(q_default):
    with pytest.raises(TailError):
        tail_quadrature(q_default, 0.0, [1.0])
    with pytest.raises(TailError):
        tail_quadrature(q_default, 1e-4, [-1.0])
    with pytest.raises(QuadratureError):
        tail_quadrature(q_default, 1e-4, [1e-3], rtol=1e-20)


def test_normal_samples_two_sided_tail():
    x = np.random.default_rng(0).standard_normal(1_000_000)
    c = tail_from_samples(x, [0.0, 1.96], 1.0)
    assert c.pbar_values[0] == 1.0
    assert c.ci_lo[1] <= 0.05 <= c.ci_hi[1]
    assert abs(c.pbar_values[1] - 0.05) < 1e-3


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=300),
       st.lists(st.floats(0, 1e3), min_size=1, max_size=20))
def test_sorted_counting_equals_naive(xs, nodes):
    nodes = np.sort(nodes)
    np.testing.assert_array_equal(tail_from_samples(xs, nodes).pbar_values,
                                  tail_from_samples_naive(xs, nodes))


def test_c_integral_value():
    val, err = c_integral()
    assert abs(val - 4) < 1e-8 and err < 1e-8
    assert c_integral(1e-6)[0] == pytest.approx(c_integral(1e-12)[0], abs=1e-6)


def test_c_integral_brute_force():
    assert c_integral_riemann(2_000_000, 200.0) == pytest.approx(4.0, rel=1e-5)


def test_c_integral_one_sided_half():
    one, _ = integrate.quad(lambda z: z ** -5 * math.exp(-0.5 / z ** 2), 0, np.inf)
    assert 2 * one == pytest.approx(c_integral()[0], rel=1e-10)


def test_asymptotic_constant_value():
    c0 = 0.3926724615057937
    assert asymptotic_constant(c0) == pytest.approx(c0 / 3 * math.sqrt(2 / math.pi) * 2,
                                                    rel=1e-12)


@given(st.floats(1e-6, 1e-2), st.floats(1.0, 1e3))
def test_asymptotic_homogeneity(dt, y):
    x = y * math.sqrt(R0 * dt)
    a = asymptotic_tail(0.39, R0, dt, [x, 2 * x]).pbar_values
    b = asymptotic_tail(0.39, R0, 2 * dt, [x]).pbar_values
    if a[0] < 1 and b[0] < 1:
        assert b[0] / a[0] == pytest.approx(2 ** 1.5, rel=1e-12)
    if a[1] < 1:
        assert a[0] / a[1] == pytest.approx(8, rel=1e-12) or a[0] == 1


def test_asymptote_matches_quadrature(q_default):
    dt = DTS[0]
    x = np.array([100.0, 300.0]) * math.sqrt(R0 * dt)
    exact = tail_quadrature(q_default, dt, x).pbar_values
    approx = asymptotic_tail(q_default.meta["C0"], R0, dt, x).pbar_values
    np.testing.assert_allclose(approx, exact, rtol=0.05)


def test_asymptotic_scaling_exact():
    x_ref = 10 * math.sqrt(R0 * DTS[-1])
    curves = [asymptotic_tail(0.39, R0, dt, [x_ref / 2, x_ref * 2]) for dt in DTS]
    assert dt_scaling_fit(curves, x_ref).estimate == pytest.approx(1.5, abs=1e-12)


def test_quadrature_scaling(q_default):
    x_ref = 10 * math.sqrt(R0 * DTS[-1])
    nodes = x_ref * np.array([0.8, 0.9, 1.0, 1.1, 1.25])
    curves = [tail_quadrature(q_default, dt, nodes) for dt in DTS]
    assert abs(dt_scaling_fit(curves, x_ref).estimate - 1.5) < 0.05


def test_scaling_fit_rules():
    mk = lambda dt: asymptotic_tail(0.39, R0, dt, [1e-3, 1e-2])
    with pytest.raises(TailError, match="4 distinct"):
        dt_scaling_fit([mk(d) for d in DTS[:3]], 5e-3)
    with pytest.raises(TailError, match="decade"):
        dt_scaling_fit([mk(d) for d in (1e-4, 2e-4, 3e-4, 5e-4)], 5e-3)
    with pytest.raises(TailError, match="overlap"):
        dt_scaling_fit([mk(d) for d in DTS], 0.5)


def test_consistency_triangle(q_default):
    # quadrature, Monte Carlo and asymptote agree where each is trustworthy
    dt = DTS[1]
    x = y_nodes(dt, 1, 300, 10)
    quad = tail_quadrature(q_default, dt, x)
    mc = mc_approx_tail(q_default, dt, x, 2_000_000, 1)
    ok = mc.counts >= 100
    assert ok.sum() >= 10
    inside = (quad.pbar_values[ok] >= mc.ci_lo[ok]) & (quad.pbar_values[ok] <= mc.ci_hi[ok])
    # 95% bands: allow a few misses
    assert inside.mean() >= 0.8
    rel = np.abs(mc.pbar_values[ok] / quad.pbar_values[ok] - 1)
    assert np.all(rel < 5 / np.sqrt(mc.counts[ok]))
    far = x >= 100 * math.sqrt(R0 * dt)
    asym = asymptotic_tail(q_default.meta["C0"], R0, dt, x[far]).pbar_values
    np.testing.assert_allclose(asym, quad.pbar_values[far], rtol=0.05)


def test_mc_deterministic(q_default):
    x = y_nodes(DTS[0], 1, 100, 5)
    a = mc_approx_tail(q_default, DTS[0], x, 50_000, 3, chunk=20_000)
    b = mc_approx_tail(q_default, DTS[0], x, 50_000, 3, chunk=20_000)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert np.all(np.diff(a.counts) <= 0)


def test_audited_windows(q_default):
    dt = DTS[0]
    c = tail_quadrature(q_default, dt, y_nodes(dt))
    lo, hi = audited_window(c, R0)
    s = math.sqrt(R0 * dt)
    assert lo >= 10 * s * (1 - 1e-12) and hi <= 10 ** 2.5 * s * (1 + 1e-12)
    with pytest.raises(TailError):
        audited_window(c)
    mc = curve_from_counts([1, 2, 3, 4], [10 ** 6, 5000, 200, 50], 10 ** 6, dt, "mc-approx")
    assert audited_window(mc) == (2.0, 3.0)
    with pytest.raises(TailError):
        audited_window(curve_from_counts([1, 2], [5, 1], 10 ** 6, dt, "mc-approx"))


def test_mle_recovers_pareto_index():
    rng = np.random.default_rng(4)
    x = (1 - rng.random(2_000_000)) ** (-1 / 3.0)
    nodes = np.logspace(0.5, 1.5, 21)
    c = tail_from_samples(x, nodes)
    fit = tail_exponent_mle(c, audited_window(c))
    assert abs(fit.estimate + 3) < 4 * fit.stderr
    with pytest.raises(TailError):
        tail_exponent_mle(tail_quadrature(spike(), 0.01, [0.01, 0.02, 0.03]), (0.01, 0.03))


def test_hill_target_of_exact_power_law():
    x = np.logspace(0, 4, 81)
    c = TailCurve(x, x ** -3.0, 1.0, "asymptotic")
    assert hill_target(c, 10.0) == pytest.approx(3.0, rel=1e-10)
    with pytest.raises(TailError):
        hill_target(c, 0.5)


def test_curve_csv_and_at():
    c = TailCurve(np.array([1.0, 10.0]), np.array([1e-2, 1e-5]), 0.5, "asymptotic")
    assert c.at(math.sqrt(10)) == pytest.approx(10 ** -3.5)
    with pytest.raises(TailError):
        c.at(20.0)
    rows = c.to_csv().splitlines()
    assert rows[0] == "x,pbar,ci_lo,ci_hi,source,dt" and rows[1].endswith("asymptotic,0.5")
    with pytest.raises(TailError):
        TailCurve(np.ones(1), np.ones(1), 1.0, "guess")


def test_from_pdf_on_normal():
    x = np.logspace(-3, 1, 401)
    c = tail_from_pdf(stats.norm.pdf(x), x)
    np.testing.assert_allclose(c.pbar_values, 2 * stats.norm.sf(x), atol=1e-6)
    with pytest.raises(TailError):
        tail_from_pdf([], [])
