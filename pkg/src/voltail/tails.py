"""Tail probability of short-horizon log returns.

Over a short horizon dt the log return is distributed as sigma * sqrt(dt) * Z
with sigma stationary and Z standard normal, independent. Then

    p(x)    = (2 pi dt)^-1/2 int_0^oo q(z) exp(-x^2 / (2 z^2 dt)) z^-1 dz
    Pbar(x) = Prob(|X| >= x) = int_0^oo q(z) erfc(x / (z sqrt(2 dt))) dz

and a sigma^-4 density tail q ~ C0 r0^1.5 sigma^-4 gives

    Pbar(x) ~ C r0^1.5 dt^1.5 x^-3,   C = (C0 / 3) sqrt(2/pi) * I / 2

with I = int_{-oo}^{oo} |z|^-5 exp(-1/(2 z^2)) dz = 4. The factor 1/2 is there
because q lives on sigma > 0; I integrates over both signs of z.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .density import DensityGrid, inverse_cdf_sampler
from .estimators import FitResult, empirical_ccdf, loglog_slope, ols, wilson_interval
from .sim import sample_returns_approx


class TailError(ValueError):
    pass


class QuadratureError(TailError):
    pass


SOURCES = ("quadrature", "pdf-quadrature", "mc-approx", "mc-exact", "asymptotic", "empirical")


@dataclass(frozen=True)
class TailCurve:
    x_nodes: np.ndarray
    pbar_values: np.ndarray
    dt: float
    source: str
    n_samples: int = 0
    ci_lo: Optional[np.ndarray] = None
    ci_hi: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.source not in SOURCES:
            raise TailError(f"unknown source {self.source!r}")

    def at(self, x: float) -> float:
        """Log-log interpolation of Pbar at x inside the node range."""
        xs, ps = self.x_nodes, self.pbar_values
        if not xs[0] <= x <= xs[-1]:
            raise TailError(f"x={x:.6g} outside curve range [{xs[0]:.6g}, {xs[-1]:.6g}]")
        ok = ps > 0
        return float(np.exp(np.interp(np.log(x), np.log(xs[ok]), np.log(ps[ok]))))

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["x", "pbar", "ci_lo", "ci_hi", "source", "dt"])
        lo = self.ci_lo if self.ci_lo is not None else self.pbar_values
        hi = self.ci_hi if self.ci_hi is not None else self.pbar_values
        for x, p, a, b in zip(self.x_nodes, self.pbar_values, lo, hi):
            wr.writerow([repr(float(x)), repr(float(p)), repr(float(a)), repr(float(b)),
                         self.source, repr(float(self.dt))])
        return buf.getvalue()


def c_integral(tol: float = 1e-12) -> tuple[float, float]:
    """int_{-oo}^{oo} |z|^-5 exp(-z^-2 / 2) dz and its error estimate.

    With u = z^-2 each half becomes (1/2) int_0^oo u exp(-u/2) du.
    """
    val, err = integrate.quad(lambda u: u * math.exp(-0.5 * u), 0.0, np.inf,
                              epsabs=tol, epsrel=tol, limit=200)
    return val, err


def c_integral_riemann(n: int = 10_000_000, z_max: float = 1000.0) -> float:
    """Brute-force midpoint sum of the two-sided integral, in z directly."""
    h = z_max / n
    total = 0.0
    chunk = 1_000_000
    for start in range(0, n, chunk):
        z = (np.arange(start, min(start + chunk, n)) + 0.5) * h
        total += np.sum(z ** -5 * np.exp(-0.5 / (z * z)))
    # beyond z_max the exponential factor is 1 to within 1e-6
    tail = z_max ** -4 / 4.0
    return 2.0 * (total * h + tail)


def asymptotic_constant(C0: float) -> float:
    val, _ = c_integral()
    return (C0 / 3.0) * math.sqrt(2.0 / math.pi) * val / 2.0


def asymptotic_tail(C0: float, r0: float, dt: float, x_nodes) -> TailCurve:
    """Pbar(x) = C r0^1.5 dt^1.5 x^-3, capped at 1."""
    if not (C0 > 0 and r0 > 0 and dt > 0):
        raise TailError("C0, r0 and dt must be positive")
    x = np.asarray(x_nodes, dtype=float)
    C = asymptotic_constant(C0)
    vals = np.minimum(C * (r0 * dt) ** 1.5 * x ** -3.0, 1.0)
    return TailCurve(x, vals, dt, "asymptotic", meta={"C": C, "C0": C0, "r0": r0})


def _tail_exponent(q: DensityGrid) -> tuple[float, float, float]:
    """(z_hi, q(z_hi), e) with q(z) ~ q(z_hi) (z/z_hi)^e beyond the grid top."""
    z_hi = float(q.sigma_nodes[-1])
    return z_hi, float(q.pdf(np.array([z_hi]))[0]), q.upper_tail_exponent()


def _breakpoints(q: DensityGrid, t_lo: float, t_hi: float, t_kernel: float) -> list[float]:
    s = q.sigma_nodes
    t_bulk = float(np.log(s[np.argmax(q.q_values * s)]))
    pts = sorted({min(max(t, t_lo), t_hi) for t in (t_bulk, t_kernel)})
    return [t_lo] + [p for p in pts if t_lo < p < t_hi] + [t_hi]


def _epsrel(rtol):
    # quad refuses epsrel below ~50 machine epsilons
    return max(rtol * 1e-2, 1e-13)


def _integrate(fn, pts, rtol):
    total, err = 0.0, 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v, e = integrate.quad(fn, a, b, epsabs=0.0, epsrel=_epsrel(rtol), limit=500)
        total += v
        err += e
    return total, err


def _check(vals, errs, x, rtol):
    rel = np.where(vals > 0, errs / np.maximum(vals, 1e-300), errs)
    worst = int(np.argmax(rel))
    if rel[worst] > rtol:
        raise QuadratureError(
            f"quadrature did not converge at x={x[worst]:.6g} (rel err {rel[worst]:.3g})")


def return_pdf_quadrature(q: DensityGrid, dt: float, x_nodes, rtol: float = 1e-8) -> np.ndarray:
    """Density of X = sigma sqrt(dt) Z at each |x|, by adaptive quadrature."""
    if not dt > 0:
        raise TailError("dt must be > 0")
    x = np.abs(np.asarray(x_nodes, dtype=float))
    t_lo, t_hi = float(np.log(q.sigma_nodes[0])), float(np.log(q.sigma_nodes[-1]))
    z_hi, q_hi, e = _tail_exponent(q)
    pref = 1.0 / math.sqrt(2.0 * math.pi * dt)
    out, errs = np.empty_like(x), np.empty_like(x)
    for i, xi in enumerate(x):
        if xi == 0.0:
            fn = lambda t: float(q.pdf(np.array([math.exp(t)]))[0])
        else:
            k = xi * xi / (2.0 * dt)
            fn = lambda t, k=k: float(q.pdf(np.array([math.exp(t)]))[0]) * math.exp(-k * math.exp(-2 * t))
        t_kernel = math.log(max(xi, 1e-300) / math.sqrt(2.0 * dt)) if xi > 0 else t_hi
        v, err = _integrate(fn, _breakpoints(q, t_lo, t_hi, t_kernel), rtol)
        # power-law continuation beyond the grid top, in w = z_hi / z
        if e < 0 and q_hi > 0:
            if xi == 0.0:
                beyond = q_hi / -e
            else:
                U = xi / (z_hi * math.sqrt(2.0 * dt))
                g, ge = integrate.quad(lambda w: w ** (-e - 1) * math.exp(-(U * w) ** 2),
                                       0.0, 1.0, epsabs=0.0, epsrel=_epsrel(rtol))
                beyond = q_hi * g
                err += q_hi * ge
            v += beyond
        out[i] = pref * v
        errs[i] = pref * err
    _check(out, errs, x, rtol)
    return out


def tail_quadrature(q: DensityGrid, dt: float, x_nodes, rtol: float = 1e-8) -> TailCurve:
    """Pbar(x) = int q(z) erfc(x / (z sqrt(2 dt))) dz at each node."""
    if not dt > 0:
        raise TailError("dt must be > 0")
    x = np.asarray(x_nodes, dtype=float)
    if np.any(x < 0):
        raise TailError("x nodes must be non-negative")
    t_lo, t_hi = float(np.log(q.sigma_nodes[0])), float(np.log(q.sigma_nodes[-1]))
    z_hi, q_hi, e = _tail_exponent(q)
    s2 = math.sqrt(2.0 * dt)
    out, errs = np.empty_like(x), np.empty_like(x)
    for i, xi in enumerate(x):
        fn = lambda t, xi=xi: (float(q.pdf(np.array([math.exp(t)]))[0]) * math.exp(t)
                               * math.erfc(xi * math.exp(-t) / s2))
        t_kernel = math.log(xi / s2) if xi > 0 else t_lo
        v, err = _integrate(fn, _breakpoints(q, t_lo, t_hi, t_kernel), rtol)
        if e < -1 and q_hi > 0:
            U = xi / (z_hi * s2)
            if xi == 0.0:
                beyond = q_hi * z_hi / -(e + 1)
            else:
                g, ge = integrate.quad(lambda w: w ** (-e - 2) * math.erfc(U * w), 0.0, 1.0,
                                       epsabs=0.0, epsrel=_epsrel(rtol))
                beyond = q_hi * z_hi * g
                err += q_hi * z_hi * ge
            v += beyond
        out[i] = min(v, 1.0)
        errs[i] = err
    _check(out, errs, x, rtol)
    return TailCurve(x, out, dt, "quadrature", meta={"rtol": rtol})


def tail_from_pdf(pdf_values, x_nodes, dt: float = float("nan")) -> TailCurve:
    """Pbar(x) = 2 int_x^oo p, by Simpson in ln x plus a power-law end piece."""
    p = np.asarray(pdf_values, dtype=float)
    x = np.asarray(x_nodes, dtype=float)
    if p.size == 0:
        raise TailError("empty input")
    pos = x > 0
    xp, pp = x[pos], p[pos]
    t = np.log(xp)
    w = pp * xp
    rev = integrate.cumulative_simpson(w[::-1], x=-t[::-1], initial=0.0)[::-1]
    e = ols(t[-4:], np.log(pp[-4:]))[0] if pp.size >= 4 else -4.0
    end = w[-1] / -(e + 1.0) if e < -1 else 0.0
    vals = np.empty_like(x)
    vals[pos] = 2.0 * (rev + end)
    if np.any(~pos):
        # segment [0, x_first]: trapezoid on the pdf
        vals[~pos] = vals[pos][0] + 2.0 * 0.5 * (p[~pos][0] + pp[0]) * xp[0]
    return TailCurve(x, np.minimum(vals, 1.0), dt, "pdf-quadrature")


def tail_from_samples(samples, x_nodes, dt: float = float("nan"), source: str = "mc-approx",
                      z: float = 1.959963984540054) -> TailCurve:
    """Empirical Pbar(x) = #{|X| >= x} / n with Wilson score bands."""
    cc = empirical_ccdf(samples, x_nodes)
    lo, hi = wilson_interval(cc.counts, cc.n, z)
    return TailCurve(cc.x, cc.pbar, dt, source, n_samples=cc.n, ci_lo=lo, ci_hi=hi,
                     counts=cc.counts)


def tail_from_samples_naive(samples, x_nodes) -> np.ndarray:
    a = np.abs(np.asarray(samples, dtype=float).ravel())
    return np.array([np.count_nonzero(a >= x) for x in np.asarray(x_nodes, dtype=float)]) / a.size


def curve_from_counts(x_nodes, counts, n, dt, source) -> TailCurve:
    counts = np.asarray(counts)
    lo, hi = wilson_interval(counts, n)
    return TailCurve(np.asarray(x_nodes, dtype=float), counts / n, dt, source,
                     n_samples=int(n), ci_lo=lo, ci_hi=hi, counts=counts)


def mc_approx_tail(q: DensityGrid, dt: float, x_nodes, n: int, seed,
                   chunk: int = 5_000_000) -> TailCurve:
    """Monte Carlo Pbar from n draws of sigma sqrt(dt) Z, streamed in chunks."""
    x = np.asarray(x_nodes, dtype=float)
    counts = np.zeros(x.size, dtype=np.int64)
    for c, start in enumerate(range(0, n, chunk)):
        m = min(chunk, n - start)
        s = inverse_cdf_sampler(q, m, (seed, c, 0))
        X = np.abs(sample_returns_approx(s, dt, (seed, c, 1)))
        X.sort()
        counts += m - np.searchsorted(X, x, side="left")
    return curve_from_counts(x, counts, n, dt, "mc-approx")


# window rules
EMPIRICAL_PBAR = (1e-5, 1e-2)
MIN_EXCEEDANCES = 100
MODEL_Y = (10.0, 10.0 ** 2.5)


def audited_window(curve: TailCurve, r0: Optional[float] = None,
                   y_floor: Optional[float] = None) -> tuple[float, float]:
    """x-range for tail-exponent fits.

    Sample-based curves: nodes with Pbar in [1e-5, 1e-2] and at least 100
    exceedances, optionally above x = y_floor sqrt(r0 dt). Model curves
    (quadrature, asymptotic): x / sqrt(r0 dt) in [10, 10^2.5], i.e. volatility
    in the sigma^2/r0 >= 100 regime.
    """
    x, p = curve.x_nodes, curve.pbar_values
    if curve.counts is None:
        if r0 is None:
            raise TailError("model curves need r0 for the window")
        scale = math.sqrt(r0 * curve.dt)
        lo, hi = MODEL_Y[0] * scale, MODEL_Y[1] * scale
        sel = (x >= lo) & (x <= hi) & (p > 0)
    else:
        sel = ((p >= EMPIRICAL_PBAR[0]) & (p <= EMPIRICAL_PBAR[1])
               & (curve.counts >= MIN_EXCEEDANCES))
        if y_floor is not None:
            if r0 is None:
                raise TailError("y_floor needs r0")
            sel &= x >= y_floor * math.sqrt(r0 * curve.dt)
    if sel.sum() < 2:
        raise TailError("audited window holds fewer than 2 nodes")
    return float(x[sel].min()), float(x[sel].max())


def tail_exponent(curve: TailCurve, window) -> FitResult:
    """Log-log slope of Pbar over the window (negative of the tail index)."""
    sel = curve.pbar_values > 0
    return loglog_slope(curve.x_nodes[sel], curve.pbar_values[sel], window)


def dt_scaling_fit(curves: Sequence[TailCurve], x_ref: float) -> FitResult:
    """OLS slope of ln Pbar(x_ref) against ln dt across curves."""
    dts = np.array([c.dt for c in curves], dtype=float)
    if np.unique(dts).size < 4:
        raise TailError("need at least 4 distinct dt values")
    if dts.max() / dts.min() < 10.0 * (1 - 1e-12):
        raise TailError("dt values must span at least one decade")
    vals = []
    for c in curves:
        try:
            vals.append(c.at(x_ref))
        except TailError as exc:
            raise TailError(f"windows do not overlap at x_ref: {exc}") from None
    vals = np.array(vals)
    if np.any(vals <= 0):
        raise TailError("zero tail probability at x_ref")
    slope, icpt, se = ols(np.log(dts), np.log(vals))
    return FitResult(slope, se, f"x_ref={x_ref:.6g}", int(dts.size), icpt)


def scaling_report(curves: Sequence[TailCurve], x_ref: float) -> dict:
    fit = dt_scaling_fit(curves, x_ref)
    return {"dt": [float(c.dt) for c in curves], "x_ref": x_ref,
            "exponent": fit.estimate, "stderr": fit.stderr, "source": curves[0].source}


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def hill_target(curve: TailCurve, threshold: float) -> float:
    """Population value of the Hill estimator at a given threshold.

    1 / E[ln(|X|/u) | |X| > u] = 1 / int_u^oo Pbar(x)/Pbar(u) dx/x, from the
    curve by log-log interpolation, with a power-law end piece.
    """
    xs = curve.x_nodes[curve.pbar_values > 0]
    if not xs[0] <= threshold < xs[-1]:
        raise TailError("threshold outside the curve range")
    t = np.log(np.concatenate([[threshold], xs[xs > threshold]]))
    lp = np.interp(t, np.log(xs), np.log(curve.pbar_values[curve.pbar_values > 0]))
    w = np.exp(lp - lp[0])
    # exact integral of the log-linear interpolant, segment by segment
    dl, dt_ = np.diff(lp), np.diff(t)
    flat = np.abs(dl) < 1e-12
    seg = np.where(flat, w[:-1] * dt_, dt_ * np.diff(w) / np.where(flat, 1.0, dl))
    body = float(seg.sum())
    slope = dl[-1] / dt_[-1]
    end = w[-1] / -slope if slope < 0 else np.inf
    return float(1.0 / (body + end))


def tail_exponent_mle(curve: TailCurve, window) -> FitResult:
    """Binned power-law maximum likelihood for sample-based curves.

    Exceedances of the window's lower edge are split into the bins between
    nodes inside the window plus one right-censored bin above its upper
    edge; cell probabilities follow Pbar ~ x^-a. Returns slope -a with the
    observed-information standard error.
    """
    if curve.counts is None:
        raise TailError("maximum likelihood needs exceedance counts")
    lo, hi = window
    sel = (curve.x_nodes >= lo) & (curve.x_nodes <= hi)
    if sel.sum() < 3:
        raise TailError("need at least 3 nodes in the window")
    xs = curve.x_nodes[sel]
    cs = curve.counts[sel].astype(float)
    cells = np.append(cs[:-1] - cs[1:], cs[-1])
    lr = np.log(xs / xs[0])

    def nll(a):
        surv = np.exp(-a * lr)
        probs = np.append(surv[:-1] - surv[1:], surv[-1])
        return -np.sum(cells * np.log(np.maximum(probs, 1e-300)))

    res = optimize.minimize_scalar(nll, bounds=(0.05, 20.0), method="bounded",
                                   options={"xatol": 1e-10})
    a = float(res.x)
    h = 1e-4 * max(a, 1.0)
    info = (nll(a + h) - 2 * nll(a) + nll(a - h)) / h ** 2
    se = float(1.0 / math.sqrt(info)) if info > 0 else float("nan")
    return FitResult(-a, se, f"[{lo:.6g}, {hi:.6g}] binned MLE", int(cs[0]))
