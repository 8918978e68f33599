"""Tail-index, regression and long-memory estimators.

All functions are pure: no hidden random state.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class FitResult:
    estimate: float
    stderr: float
    window: str
    n_used: int
    intercept: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def ols(x, y) -> tuple[float, float, float]:
    """Slope, intercept and slope standard error of y on x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise EstimatorError("degenerate regressor")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    icpt = ym - slope * xm
    resid = y - icpt - slope * x
    se = np.sqrt(np.sum(resid ** 2) / (n - 2) / sxx) if n > 2 else 0.0
    return float(slope), float(icpt), float(se)


def default_hill_k(n: int) -> int:
    return int(round(max(10, min(n ** (2.0 / 3.0), n / 10))))


def hill(samples, k: int | None = None) -> FitResult:
    """Hill estimate of the tail index a in P(X >= x) ~ x^-a."""
    x = np.asarray(samples, dtype=float).ravel()
    x = x[x > 0]
    n = x.size
    if k is None:
        k = default_hill_k(n)
    if k < 10 or k >= n / 2:
        raise EstimatorError(f"need 10 <= k < n/2 (k={k}, n={n})")
    top = np.partition(x, n - k - 1)[n - k - 1:]
    top.sort()
    threshold = top[0]
    logs = np.log(top[1:] / threshold)
    est = 1.0 / logs.mean()
    return FitResult(float(est), float(est / np.sqrt(k)),
                     f"top {k} order statistics above {threshold:.6g}", int(k))


def hill_curve(samples, ks) -> np.ndarray:
    x = np.sort(np.asarray(samples, dtype=float).ravel())[::-1]
    lx = np.log(x)
    cums = np.cumsum(lx)
    ks = np.asarray(ks, dtype=int)
    return 1.0 / (cums[ks - 1] / ks - lx[ks])


def loglog_slope(x, y, window=None) -> FitResult:
    """OLS slope of ln y on ln x for points with window[0] <= x <= window[1]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if window is None:
        sel = np.ones(x.shape, dtype=bool)
        desc = "all points"
    else:
        sel = (x >= window[0]) & (x <= window[1])
        desc = f"[{window[0]:.6g}, {window[1]:.6g}]"
    if sel.sum() < 5:
        raise EstimatorError(f"need at least 5 points in window, got {int(sel.sum())}")
    if np.any(x[sel] <= 0) or np.any(y[sel] <= 0):
        raise EstimatorError("non-positive data in window")
    slope, icpt, se = ols(np.log(x[sel]), np.log(y[sel]))
    return FitResult(slope, se, desc, int(sel.sum()), icpt)


def acf(series, lags) -> np.ndarray:
    """Autocorrelation with the biased (1/n) normalization, via FFT."""
    x = np.asarray(series, dtype=float)
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    n = x.size
    if lags.size and (lags.max() >= n or lags.min() < 0):
        raise EstimatorError("lags must lie in [0, n)")
    xc = x - x.mean()
    var = np.dot(xc, xc) / n
    if var == 0:
        raise EstimatorError("constant series")
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(xc, nfft)
    ac = np.fft.irfft(fx * np.conj(fx), nfft)[:n] / n
    return ac[lags] / var


def vol_of_vol(sigma_path, window: float, dt: float) -> float:
    """Annualized realized volatility of relative volatility changes, in percent.

    The path is cut into disjoint windows of ``window`` time units; the
    standard deviation of d(sigma)/sigma across windows is scaled by
    1/sqrt(window).
    """
    s = np.asarray(sigma_path, dtype=float)
    m = int(round(window / dt))
    if m < 1 or window < 5 * dt:
        raise EstimatorError("window must span several simulation steps")
    idx = np.arange(0, s.size, m)
    if idx.size < 3:
        raise EstimatorError("path too short for the window")
    v = s[idx]
    rel = np.diff(v) / v[:-1]
    return float(100.0 * rel.std(ddof=1) / np.sqrt(window))


@dataclass(frozen=True)
class CCDF:
    x: np.ndarray
    pbar: np.ndarray
    counts: np.ndarray
    n: int


def empirical_ccdf(samples, x_nodes) -> CCDF:
    """Fraction of |samples| >= x at each node (sorted-sample route)."""
    a = np.sort(np.abs(np.asarray(samples, dtype=float).ravel()))
    n = a.size
    if n == 0:
        raise EstimatorError("empty sample set")
    x = np.asarray(x_nodes, dtype=float)
    counts = n - np.searchsorted(a, x, side="left")
    return CCDF(x, counts / n, counts, n)


def wilson_interval(k, n, z: float = 1.959963984540054):
    """Wilson score interval for a binomial proportion k/n."""
    k = np.asarray(k, dtype=float)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = np.where(k <= 0, 0.0, np.maximum(centre - half, 0.0))
    hi = np.where(k >= n, 1.0, np.minimum(centre + half, 1.0))
    return lo, hi
