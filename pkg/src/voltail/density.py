"""Stationary density of volatility: closed form, zero-flux FPE solve, histogram.

With zero probability flux the stationary forward equation integrates once to
``alpha q = 1/2 d(beta^2 q)/dsigma``, so ``u = beta^2 q`` satisfies
``d ln u / d sigma = 2 alpha / beta^2``. For the built-in model this gives

    q(sigma) = N sigma^-4 exp(-(2 k r0^1.5 / (3 B^2)) sigma^-3 + (A r0 / B^2) sigma^-2)

whose sigma^-4 tail defines C0 through N = C0 r0^1.5.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .estimators import ols
from .model import ModelParams, VolModel


class DensityError(ValueError):
    pass


class NotNormalizable(DensityError):
    pass


class NonIntegrable(DensityError):
    def __init__(self, end: str, detail: str = ""):
        self.end = end
        super().__init__(f"normalization integral diverges at the {end} end {detail}".strip())


_LOG_FLOOR = -745.0


@dataclass(frozen=True)
class DensityGrid:
    sigma_nodes: np.ndarray
    q_values: np.ndarray
    norm_check: float
    source: str
    edges: Optional[np.ndarray] = None
    counts: Optional[np.ndarray] = None
    low_confidence: Optional[np.ndarray] = None
    n_samples: int = 0
    q_fn: Optional[Callable] = field(default=None, repr=False, compare=False)
    meta: dict = field(default_factory=dict, compare=False)

    def pdf(self, sigma):
        """Density at arbitrary sigma.

        Uses the exact callable when one exists, otherwise monotone cubic
        interpolation of ln q in ln sigma, zero outside the grid.
        """
        s = np.asarray(sigma, dtype=float)
        if self.q_fn is not None:
            return self.q_fn(s)
        interp = self._log_interp()
        out = np.zeros_like(s)
        inside = (s >= self.sigma_nodes[0]) & (s <= self.sigma_nodes[-1])
        out[inside] = np.exp(interp(np.log(s[inside])))
        return out

    def _log_interp(self):
        cached = self.meta.get("_log_interp")
        if cached is None:
            with np.errstate(divide="ignore"):
                lq = np.log(self.q_values)
            lq = np.maximum(lq, _LOG_FLOOR)
            cached = PchipInterpolator(np.log(self.sigma_nodes), lq, extrapolate=False)
            self.meta["_log_interp"] = cached
        return cached

    def upper_tail_exponent(self) -> float:
        """Local power-law exponent of q over the last decade of the grid.

        Narrow grids use their upper half instead, so a bump is never fitted
        across its peak.
        """
        t = np.log(self.sigma_nodes)
        start = max(t[-1] - np.log(10.0), 0.5 * (t[0] + t[-1]))
        sel = (t >= start) & (self.q_values > 0)
        if sel.sum() < 2:
            return -np.inf
        return ols(t[sel], np.log(self.q_values[sel]))[0]

    def cdf_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative and survival probabilities at the nodes.

        The survival function includes the power-law mass beyond the top node.
        """
        t = np.log(self.sigma_nodes)
        w = self.q_values * self.sigma_nodes
        cum = integrate.cumulative_simpson(w, x=t, initial=0.0)
        rev = integrate.cumulative_simpson(w[::-1], x=-t[::-1], initial=0.0)[::-1]
        e = self.upper_tail_exponent()
        beyond = w[-1] / -(e + 1.0) if e < -1.0 else 0.0
        total = cum[-1] + beyond
        return cum / total, (rev + beyond) / total

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["sigma", "q", "source"])
        for s, q in zip(self.sigma_nodes, self.q_values):
            wr.writerow([repr(float(s)), repr(float(q)), self.source])
        return buf.getvalue()

    def metadata(self) -> dict:
        return {k: v for k, v in self.meta.items() if not k.startswith("_")} | {
            "source": self.source, "norm_check": self.norm_check,
            "n_nodes": int(self.sigma_nodes.size), "n_samples": self.n_samples}


def log_grid(r0: float, lo: float = 1e-3, hi: float = 1e3, n: int = 2048) -> np.ndarray:
    """Log-spaced volatility nodes spanning [lo, hi] * sqrt(r0)."""
    return np.sqrt(r0) * np.logspace(np.log10(lo), np.log10(hi), n)


def _simpson_log(q, sigma) -> float:
    return float(integrate.simpson(q * sigma, x=np.log(sigma)))


def _shape_constants(params: ModelParams) -> tuple[float, float]:
    if params.B <= 0:
        raise NotNormalizable("B = 0: no diffusion, no stationary density")
    a = 2.0 * params.k / (3.0 * params.B ** 2)
    b = params.A / params.B ** 2
    return a, b


def stationary_c0(params: ModelParams) -> float:
    """Dimensionless tail constant C0 of the built-in model's closed form.

    C0 = 1 / int_0^oo u^2 exp(-a u^3 + b u^2) du, with u = sqrt(r0)/sigma.
    """
    a, b = _shape_constants(params)
    if params.k <= 0:
        raise NotNormalizable("k = 0: the bare asymptotic model has no stationary density")
    u_peak = max(2.0 * b / (3.0 * a), (2.0 / (3.0 * a)) ** (1.0 / 3.0))
    shift = -a * u_peak ** 3 + b * u_peak ** 2
    f = lambda u: u * u * np.exp(-a * u ** 3 + b * u ** 2 - shift)
    u_end = u_peak + 40.0 / (3.0 * a * u_peak ** 2) + 10.0 * (1.0 / a) ** (1.0 / 3.0)
    val, _ = integrate.quad(f, 0.0, u_peak, epsabs=0.0, epsrel=1e-13, limit=200)
    val2, _ = integrate.quad(f, u_peak, u_end, epsabs=0.0, epsrel=1e-13, limit=200)
    return float(np.exp(-shift) / (val + val2))


def closed_form_q(params: ModelParams) -> Callable:
    a, b = _shape_constants(params)
    c0 = stationary_c0(params)
    r0 = params.r0
    norm = c0 * r0 ** 1.5

    def q(sigma):
        s = np.asarray(sigma, dtype=float)
        out = np.zeros_like(s)
        pos = s > 0
        u = np.sqrt(r0) / s[pos]
        out[pos] = norm * s[pos] ** -4 * np.exp(-a * u ** 3 + b * u ** 2)
        return out if out.ndim else float(out)

    return q


def closed_form_stationary(params: ModelParams, grid=None) -> DensityGrid:
    """Closed-form stationary density of the built-in model on a log grid."""
    if params.k <= 0:
        raise NotNormalizable("k = 0: the bare asymptotic model has no stationary density")
    grid = log_grid(params.r0) if grid is None else np.asarray(grid, dtype=float)
    qf = closed_form_q(params)
    qv = qf(grid)
    c0 = stationary_c0(params)
    return DensityGrid(grid, qv, _simpson_log(qv, grid), "closed-form", q_fn=qf,
                       meta={"C0": c0, "N": c0 * params.r0 ** 1.5,
                             "params": params.to_dict()})


def closed_form_flux_residual(params: ModelParams, sigma) -> np.ndarray:
    """Relative zero-flux residual of the closed form, derived symbolically.

    Returns |alpha q - 1/2 (beta^2 q)'| / (|alpha q| + |1/2 (beta^2 q)'|) at
    each sigma, where the derivative is taken by sympy and q is unnormalized.
    """
    import sympy as sp

    s = sp.symbols("sigma", positive=True)
    A, B, k, r0 = (sp.nsimplify(v) for v in (params.A, params.B, params.k, params.r0))
    alpha = k * r0 ** sp.Rational(3, 2) - A * r0 * s
    beta = B * s ** 2
    q = s ** -4 * sp.exp(-(2 * k * r0 ** sp.Rational(3, 2) / (3 * B ** 2)) * s ** -3
                         + (A * r0 / B ** 2) * s ** -2)
    lhs = alpha * q
    rhs = sp.diff(beta ** 2 * q, s) / 2
    # divide out the common exponential factor before evaluating
    lhs_r = sp.simplify(lhs / q)
    rhs_r = sp.simplify(rhs / q)
    fl = sp.lambdify(s, lhs_r, "numpy")
    fr = sp.lambdify(s, rhs_r, "numpy")
    x = np.asarray(sigma, dtype=float)
    lv = fl(x) * np.ones_like(x)
    rv = fr(x) * np.ones_like(x)
    return np.abs(lv - rv) / (np.abs(lv) + np.abs(rv))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def _log_u(model: VolModel, grid: np.ndarray) -> np.ndarray:
    """ln(beta^2 q) up to a constant, by Gauss-Legendre on every interval."""
    t = np.log(grid)
    lo, hi = t[:-1], t[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    tt = mid[:, None] + half[:, None] * _GL_X[None, :]
    ss = np.exp(tt)
    integrand = 2.0 * model.alpha(ss) * ss / model.beta(ss) ** 2
    pieces = (integrand * _GL_W[None, :]).sum(axis=1) * half
    node_vals = 2.0 * model.alpha(grid) * grid / model.beta(grid) ** 2
    anchor = int(np.argmin(np.abs(node_vals)))
    out = np.empty_like(grid)
    out[anchor] = 0.0
    out[anchor + 1:] = np.cumsum(pieces[anchor:])
    out[:anchor] = -np.cumsum(pieces[:anchor][::-1])[::-1]
    return out


def solve_stationary_fpe(model: VolModel, grid=None, boundary: str = "zero-flux") -> DensityGrid:
    """Stationary forward-equation solution for any coefficient pair.

    Raises :class:`NonIntegrable` when the normalization integral does not
    converge at an end of the grid (the mass does not decay toward that end).
    """
    if boundary != "zero-flux":
        raise DensityError(f"unsupported boundary {boundary!r}")
    grid = log_grid(model.params.r0) if grid is None else np.asarray(grid, dtype=float)
    if grid.size < 5 or np.any(np.diff(grid) <= 0):
        raise DensityError("grid must be ascending with at least 5 nodes")
    log_q = _log_u(model, grid) - 2.0 * np.log(model.beta(grid))
    # mass per unit ln(sigma)
    log_m = log_q + np.log(grid)
    t = np.log(grid)
    m = 4
    slope_lo = np.polyfit(t[:m], log_m[:m], 1)[0]
    slope_hi = np.polyfit(t[-m:], log_m[-m:], 1)[0]
    peak = float(np.max(log_m))
    if slope_lo <= 0 and log_m[0] > peak - 40:
        raise NonIntegrable("lower", f"(d ln mass/d ln sigma = {slope_lo:.3g})")
    if slope_hi >= 0 and log_m[-1] > peak - 40:
        raise NonIntegrable("upper", f"(d ln mass/d ln sigma = {slope_hi:.3g})")
    w = np.exp(log_m - peak)
    z = float(integrate.simpson(w, x=t))
    q = np.exp(log_q - peak) / z
    return DensityGrid(grid, q, _simpson_log(q, grid), "fpe",
                       meta={"end_slopes": [float(slope_lo), float(slope_hi)],
                             "params": model.params.to_dict()})


def default_edges(r0: float, lo: float = 1e-2, hi: float = 1e3, per_decade: int = 20) -> np.ndarray:
    n = int(round(np.log10(hi / lo) * per_decade))
    return np.sqrt(r0) * np.logspace(np.log10(lo), np.log10(hi), n + 1)


def histogram_density(sigma_samples, bins=None, n_bins: int = 100,
                      min_samples: int = 10_000, min_count: int = 10) -> DensityGrid:
    """Histogram estimate of a volatility density on log-spaced bins.

    ``bins`` may be explicit edges; otherwise ``n_bins`` log-spaced bins span
    the sample range. Bins with fewer than ``min_count`` entries are flagged.
    """
    x = np.asarray(sigma_samples, dtype=float).ravel()
    if x.size == 0:
        raise DensityError("empty sample set")
    if x.size < min_samples:
        raise DensityError(f"need at least {min_samples} samples, got {x.size}")
    if bins is None:
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            edges = np.array([lo / 1.01, lo * 1.01])
        else:
            edges = np.logspace(np.log10(lo), np.log10(hi), n_bins + 1)
            edges[0], edges[-1] = lo, hi
    else:
        edges = np.asarray(bins, dtype=float)
    counts, _ = np.histogram(x, bins=edges)
    return _histogram_grid(counts, edges, x.size, min_count)


def _histogram_grid(counts, edges, n: int, min_count: int = 10) -> DensityGrid:
    counts = np.asarray(counts)
    width = np.diff(edges)
    q = counts / (n * width)
    centers = np.sqrt(edges[:-1] * edges[1:])
    return DensityGrid(centers, q, float(np.sum(q * width)), "histogram",
                       edges=edges, counts=counts, low_confidence=counts < min_count,
                       n_samples=int(n))


def histogram_from_counts(counts, edges, n: int, min_count: int = 10) -> DensityGrid:
    """Histogram grid from pre-binned counts (streamed simulation output)."""
    return _histogram_grid(counts, np.asarray(edges, dtype=float), n, min_count)


def bin_masses(density: DensityGrid, edges) -> np.ndarray:
    """Probability of each bin under a (closed-form or FPE) density."""
    edges = np.asarray(edges, dtype=float)
    if density.q_fn is not None:
        # exact callable: adaptive quadrature per bin in ln sigma
        f = lambda t: float(density.q_fn(np.exp(t)) * np.exp(t))
        return np.array([integrate.quad(f, np.log(a), np.log(b), epsabs=0, epsrel=1e-10)[0]
                         for a, b in zip(edges[:-1], edges[1:])])
    cdf, _ = density.cdf_table()
    t = np.log(density.sigma_nodes)
    c = np.interp(np.log(edges), t, cdf, left=0.0, right=1.0)
    return np.diff(c)


def l1_distance(hist: DensityGrid, reference: DensityGrid) -> float:
    """L1 distance between a histogram and a reference density.

    The reference is averaged over each bin, so binning itself adds no bias;
    mass outside the histogram range counts too.
    """
    if hist.edges is None:
        raise DensityError("first argument must be a histogram")
    p_hat = hist.q_values * np.diff(hist.edges)
    p = bin_masses(reference, hist.edges)
    return float(np.sum(np.abs(p_hat - p)) + abs((1 - p_hat.sum()) - (1 - p.sum())))


def histogram_l1(a: DensityGrid, b: DensityGrid) -> float:
    if a.edges is None or b.edges is None or not np.array_equal(a.edges, b.edges):
        raise DensityError("histograms must share edges")
    w = np.diff(a.edges)
    return float(np.sum(np.abs(a.q_values - b.q_values) * w))


@dataclass(frozen=True)
class TailFit:
    exponent: float
    stderr: float
    prefactor: float
    C0: float
    window: tuple[float, float]
    n_used: int

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "stderr": self.stderr,
                "prefactor": self.prefactor, "C0": self.C0,
                "window": list(self.window), "n_used": self.n_used}


def tail_fit(density: DensityGrid, window, r0: float, law_exponent: float = -4.0) -> TailFit:
    """Power-law fit of the density tail over a sigma window.

    The exponent is the least-squares slope of ln q against ln sigma. C0 is
    the prefactor of the sigma^-4 law in units of r0^1.5, estimated as the
    geometric mean of q sigma^4 / r0^1.5 over the window; prefactor is
    C0 r0^1.5.
    """
    lo, hi = float(window[0]), float(window[1])
    if hi / lo < 10.0 * (1 - 1e-9):
        raise DensityError("window narrower than one decade")
    if lo ** 2 / r0 < 1e2 * (1 - 1e-9):
        raise DensityError("window must satisfy sigma_lo^2 / r0 >= 100")
    s = density.sigma_nodes
    sel = (s >= lo * (1 - 1e-12)) & (s <= hi * (1 + 1e-12)) & (density.q_values > 0)
    if density.low_confidence is not None:
        sel &= ~density.low_confidence
    if sel.sum() < 3:
        raise DensityError("fewer than 3 usable nodes in window")
    x, y = np.log(s[sel]), np.log(density.q_values[sel])
    slope, _, stderr = ols(x, y)
    c0 = float(np.exp(np.mean(y - law_exponent * x)) / r0 ** 1.5)
    return TailFit(slope, stderr, c0 * r0 ** 1.5, c0, (lo, hi), int(sel.sum()))


def moment(density: DensityGrid, p: float) -> float:
    """int sigma^p q(sigma) d sigma."""
    s = density.sigma_nodes
    if density.q_fn is not None:
        f = lambda t: float(density.q_fn(np.exp(t)) * np.exp((p + 1) * t))
        lo, hi = np.log(s[0]), np.log(s[-1])
        peak = float(np.log(s[np.argmax(density.q_values * s ** (p + 1))]))
        return float(integrate.quad(f, lo, peak, epsrel=1e-11, limit=400)[0]
                     + integrate.quad(f, peak, hi, epsrel=1e-11, limit=400)[0])
    return float(integrate.simpson(density.q_values * s ** (p + 1), x=np.log(s)))


def _strictly_rising(v: np.ndarray) -> np.ndarray:
    """Mask keeping each value only if it exceeds every earlier one."""
    prev = np.maximum.accumulate(np.concatenate([[-np.inf], v[:-1]]))
    return v > prev


def inverse_cdf_sampler(density: DensityGrid, n: int, seed, tol: float = 1e-3) -> np.ndarray:
    """Draw volatilities by monotone-spline inversion of the density's CDF.

    Lower-half draws invert ln F(sigma), upper-half draws invert the log
    survival function, so the power-law tail keeps full relative precision.
    Draws beyond the grid top follow the power law fitted to the last decade.
    """
    if abs(density.norm_check - 1.0) > tol:
        raise DensityError(f"density not normalized (integral = {density.norm_check:.6g})")
    if n == 0:
        return np.empty(0)
    cdf, surv = density.cdf_table()
    t = np.log(density.sigma_nodes)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    u = rng.random(n)
    out = np.empty(n)

    lower = u < 0.5
    ok = cdf > 0
    lc = np.log(cdf[ok])
    keep = _strictly_rising(lc)
    inv_lo = PchipInterpolator(lc[keep], t[ok][keep], extrapolate=False)
    v = np.log(u[lower])
    r = inv_lo(np.clip(v, lc[keep][0], lc[keep][-1]))
    out[lower] = np.exp(r)

    ok = surv > 0
    ls = np.log(surv[ok])[::-1]
    ts = t[ok][::-1]
    keep = _strictly_rising(ls)
    ls, ts = ls[keep], ts[keep]
    inv_hi = PchipInterpolator(ls, ts, extrapolate=False)
    w = np.log1p(-u[~lower])
    r = np.empty_like(w)
    inside = w >= ls[0]
    r[inside] = inv_hi(np.minimum(w[inside], ls[-1]))
    if np.any(~inside):
        # power-law extension beyond the top node: ln S has slope e + 1
        slope = min(density.upper_tail_exponent() + 1.0, -1e-3)
        r[~inside] = ts[0] + (w[~inside] - ls[0]) / slope
    out[~lower] = np.exp(r)
    return out


def stationary_density(model: VolModel, grid=None) -> DensityGrid:
    """Closed form for the built-in model with k > 0, zero-flux FPE otherwise."""
    if model.is_builtin and model.params.k > 0:
        return closed_form_stationary(model.params, grid)
    return solve_stationary_fpe(model, grid)
