"""The volatility model class d(sigma) = alpha dt + beta dW2.

Drift and diffusion are written through a pair of dimensionless functions,

    alpha(sigma) = sigma**3 * f(r0 / sigma**2)
    beta(sigma)  = sigma**2 * g(r0 / sigma**2)

The built-in family uses f(x) = k x**1.5 - A x and g(x) = B, so that
alpha = k r0**1.5 - A r0 sigma and beta = B sigma**2. Its k = 0 member is the
pure high-volatility model; k > 0 makes sigma = 0 repelling.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import dims


class ModelError(ValueError):
    pass


class NegativeDiffusion(ModelError):
    pass


class ConditionViolated(ModelError):
    def __init__(self, condition: str, value: float):
        self.condition = condition
        self.value = value
        super().__init__(f"condition violated: {condition} (estimated {value:.6g})")


@dataclass(frozen=True)
class ModelParams:
    A: float = 1.0
    B: float = 1.0
    k: float = 1.0
    r0: float = 0.04
    rho: float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        if self.A < 0:
            raise ModelError("A must be >= 0")
        # B == 0 is admitted as the diffusion-off limit
        if self.B < 0:
            raise ModelError("B must be >= 0")
        if self.k < 0:
            raise ModelError("k must be >= 0")
        if self.r0 <= 0:
            raise ModelError("r0 must be > 0")
        if abs(self.rho) > 1:
            raise ModelError("|rho| must be <= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CoefficientPair:
    """Dimensionless drift/diffusion shape functions f, g on x = r0/sigma^2."""

    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"
    builtin: bool = False


def builtin_coeffs(params: ModelParams) -> CoefficientPair:
    A, B, k = params.A, params.B, params.k
    return CoefficientPair(
        f=lambda x: k * np.asarray(x, dtype=float) ** 1.5 - A * np.asarray(x, dtype=float),
        g=lambda x: np.full_like(np.asarray(x, dtype=float), B),
        name="builtin",
        builtin=True,
    )


@dataclass(frozen=True)
class VolModel:
    params: ModelParams = field(default_factory=ModelParams)
    coeffs: Optional[CoefficientPair] = None

    def __post_init__(self):
        if self.coeffs is None:
            object.__setattr__(self, "coeffs", builtin_coeffs(self.params))

    @property
    def is_builtin(self) -> bool:
        return self.coeffs.builtin

    def alpha(self, sigma):
        return alpha(self.params, self.coeffs, sigma)

    def beta(self, sigma):
        return beta(self.params, self.coeffs, sigma)

    def dims_report(self) -> dims.DimReport:
        return check_model_dims(self)


def _check_sigma(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if np.any(~(s > 0)):
        raise ModelError("sigma must be > 0")
    return s


def alpha(params: ModelParams, coeffs: CoefficientPair, sigma):
    s = _check_sigma(sigma)
    if coeffs.builtin:
        # closed form avoids cancellation in sigma^3 * (k x^1.5 - A x)
        out = params.k * params.r0 ** 1.5 - params.A * params.r0 * s
    else:
        out = s ** 3 * np.asarray(coeffs.f(params.r0 / s ** 2), dtype=float)
    return out if np.ndim(out) else float(out)


def beta(params: ModelParams, coeffs: CoefficientPair, sigma):
    s = _check_sigma(sigma)
    gx = np.asarray(coeffs.g(params.r0 / s ** 2), dtype=float)
    if np.any(gx < 0) or (not coeffs.builtin and np.any(gx <= 0)):
        raise NegativeDiffusion("g evaluated <= 0")
    out = s ** 2 * gx
    return out if np.ndim(out) else float(out)


def check_model_dims(model: VolModel) -> dims.DimReport:
    """Dimension check of a model expressed through f, g.

    f and g are dimensionless by construction, so alpha = sigma^3 f and
    beta = sigma^2 g inherit their dimensions from sigma; r0 enters only
    through the dimensionless x = r0 sigma^-2.
    """
    x_dim = dims.combine([dims.RATE, dims.VOLATILITY], [1, -2])
    if not x_dim.dimensionless:  # pragma: no cover - constants are fixed
        raise AssertionError("r0 sigma^-2 must be dimensionless")
    alpha_dim = dims.power(dims.VOLATILITY, 3)
    beta_dim = dims.power(dims.VOLATILITY, 2)
    return dims.check_sde_dims(alpha_dim, beta_dim, dims.VOLATILITY, [dims.RATE])


@dataclass(frozen=True)
class AsymptoticReport:
    A: float
    B: float
    f0: float
    fprime0: float
    g0: float
    f0_ok: bool
    fprime_ok: bool
    g0_ok: bool

    @property
    def ok(self) -> bool:
        return self.f0_ok and self.fprime_ok and self.g0_ok


def _richardson_sqrt(fn, h0: float, levels: int) -> float:
    """Limit of fn(h) as h -> 0+ assuming an expansion in powers of sqrt(h)."""
    hs = h0 / 4.0 ** np.arange(levels)
    table = [float(fn(h)) for h in hs]
    # each step halves sqrt(h): eliminate successive sqrt(h)^j terms
    for j in range(1, levels):
        fac = 2.0 ** j
        table = [(fac * table[i + 1] - table[i]) / (fac - 1.0)
                 for i in range(len(table) - 1)]
    return table[0]


def asymptotic_coeffs(coeffs: CoefficientPair, h0: float = 1e-2, levels: int = 6,
                      tol: float = 1e-8, raise_on_violation: bool = True
                      ) -> AsymptoticReport:
    """One-sided expansion of f and g at x = 0+.

    Returns A = -f'(0+) and B = g(0+), obtained by Richardson extrapolation of
    one-sided samples (the extrapolation runs in powers of sqrt(x), so terms
    such as x**1.5 are removed exactly). Raises :class:`ConditionViolated`
    for the first failing condition among f(0) = 0, f'(0) <= 0, g(0) > 0.
    """
    f = lambda x: float(np.asarray(coeffs.f(np.array([x])), dtype=float)[0])
    g = lambda x: float(np.asarray(coeffs.g(np.array([x])), dtype=float)[0])
    f0 = _richardson_sqrt(f, h0, levels)
    scale = max(1.0, abs(f(h0)) / h0)
    f0_ok = abs(f0) <= tol * scale
    f0_used = 0.0 if f0_ok else f0
    fp0 = _richardson_sqrt(lambda h: (f(h) - f0_used) / h, h0, levels)
    g0 = _richardson_sqrt(g, h0, levels)
    fprime_ok = fp0 <= tol * scale
    g0_ok = g0 > tol
    rep = AsymptoticReport(A=-fp0, B=g0, f0=f0, fprime0=fp0, g0=g0,
                           f0_ok=f0_ok, fprime_ok=fprime_ok, g0_ok=g0_ok)
    if raise_on_violation:
        if not f0_ok:
            raise ConditionViolated("f(0) = 0", f0)
        if not fprime_ok:
            raise ConditionViolated("f'(0) <= 0", fp0)
        if not g0_ok:
            raise ConditionViolated("g(0) > 0", g0)
    return rep


@dataclass(frozen=True)
class StylizedFactReport:
    mean_reversion_ok: bool
    worst_sigma: Optional[float]
    worst_alpha: float
    long_memory_ok: bool
    long_memory_sup: float
    long_memory_final: float
    vvol_ok: bool
    vvol_inf: float
    vvol_slope: float
    sigma_min: float

    @property
    def ok(self) -> bool:
        return self.mean_reversion_ok and self.long_memory_ok and self.vvol_ok

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


LONG_MEMORY_MAX = 0.1
VVOL_MIN_SLOPE = -0.1


def validate_stylized_facts(params: ModelParams, coeffs: CoefficientPair,
                            sigma_min: float, sigma_grid) -> StylizedFactReport:
    """Check mean reversion, long memory and vol-of-vol on a sigma grid.

    * mean reversion: alpha <= 0 at every grid point at or above ``sigma_min``;
    * long memory: |alpha| sigma^-3 is non-increasing over the top decade of
      the grid and its last value is below ``LONG_MEMORY_MAX``;
    * vol-of-vol: beta sigma^-2 stays positive over the top decade and does
      not decay like a power of sigma (log-log slope >= ``VVOL_MIN_SLOPE``).
    """
    s = np.asarray(sigma_grid, dtype=float)
    if s.size == 0:
        raise ModelError("empty sigma grid")
    if np.any(s <= 0) or np.any(np.diff(s) <= 0):
        raise ModelError("sigma grid must be positive and ascending")
    if not s[0] <= sigma_min <= s[-1]:
        raise ModelError("sigma_min outside grid span")
    a = np.asarray(alpha(params, coeffs, s), dtype=float) * np.ones_like(s)
    b = np.asarray(beta(params, coeffs, s), dtype=float) * np.ones_like(s)

    above = s >= sigma_min
    pos = above & (a > 0)
    mr_ok = not np.any(pos)
    if mr_ok:
        worst_sigma, worst_alpha = None, float(np.max(a[above]))
    else:
        i = int(np.argmax(np.where(pos, a, -np.inf)))
        worst_sigma, worst_alpha = float(s[i]), float(a[i])

    top = s >= s[-1] / 10.0
    if top.sum() < 2:
        top = np.zeros_like(s, dtype=bool)
        top[-2:] = True
    lm = np.abs(a[top]) * s[top] ** -3
    steps = np.diff(lm)
    lm_ok = bool(np.all(steps <= 1e-12 * max(lm.max(), 1e-300))) and lm[-1] < LONG_MEMORY_MAX

    vv = b[top] * s[top] ** -2
    if np.all(vv > 0):
        slope = float(np.polyfit(np.log(s[top]), np.log(vv), 1)[0])
    else:
        slope = -np.inf
    vv_ok = bool(np.min(vv) > 0 and slope >= VVOL_MIN_SLOPE)

    return StylizedFactReport(
        mean_reversion_ok=mr_ok, worst_sigma=worst_sigma, worst_alpha=worst_alpha,
        long_memory_ok=bool(lm_ok), long_memory_sup=float(lm.max()),
        long_memory_final=float(lm[-1]), vvol_ok=vv_ok, vvol_inf=float(vv.min()),
        vvol_slope=slope, sigma_min=float(sigma_min))


SHORT_TERM_MAX = 0.01
HIGH_VOL_MIN = 100.0


@dataclass(frozen=True)
class RegimeReport:
    sigma2_dt: float
    sigma2_over_r0: float
    short_term_ok: bool
    high_vol_ok: bool
    short_term_threshold: float = SHORT_TERM_MAX
    high_vol_threshold: float = HIGH_VOL_MIN

    def to_dict(self) -> dict:
        return asdict(self)


def regime_diagnostics(sigma: float, r0: float, dt: float) -> RegimeReport:
    """Short-term (sigma^2 dt -> 0) and high-volatility (sigma^2/r0 -> oo) numbers."""
    if not (sigma > 0 and r0 > 0 and dt > 0):
        raise ModelError("sigma, r0 and dt must be positive")
    s2dt = sigma ** 2 * dt
    s2r = sigma ** 2 / r0
    return RegimeReport(s2dt, s2r, s2dt <= SHORT_TERM_MAX, s2r >= HIGH_VOL_MIN)


def default_sigma_grid(r0: float, lo: float = 1e-2, hi: float = 1e3, n: int = 501):
    return np.sqrt(r0) * np.logspace(np.log10(lo), np.log10(hi), n)


def to_json(report) -> str:
    return json.dumps(report.to_dict(), indent=2)
