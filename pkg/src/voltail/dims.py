"""Exact dimensional algebra over powers of the time unit T.

Every quantity in the volatility model has a dimension that is a rational
power of time: the Wiener process carries T^(1/2), volatility T^(-1/2), the
drift of volatility T^(-3/2), its diffusion T^(-1) and every model rate T^(-1).
Exponents are kept as :class:`fractions.Fraction` so all checks are exact.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class NoInverseTimeCombination(DimensionError):
    pass


def _frac(x) -> Fraction:
    if isinstance(x, float):
        raise TypeError("float exponents are not allowed; use Fraction or str")
    return Fraction(x)


@dataclass(frozen=True)
class TimeDim:
    exponent: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "exponent", _frac(self.exponent))

    def __mul__(self, other: "TimeDim") -> "TimeDim":
        return TimeDim(self.exponent + other.exponent)

    def __truediv__(self, other: "TimeDim") -> "TimeDim":
        return TimeDim(self.exponent - other.exponent)

    def __pow__(self, p) -> "TimeDim":
        return TimeDim(self.exponent * _frac(p))

    @property
    def dimensionless(self) -> bool:
        return self.exponent == 0

    def __str__(self) -> str:
        return f"T^{self.exponent}"


def power(d: TimeDim, p) -> TimeDim:
    return d ** p


DIMENSIONLESS = TimeDim(0)
TIME = TimeDim(1)
WIENER = TimeDim(Fraction(1, 2))
VOLATILITY = TimeDim(Fraction(-1, 2))
DRIFT = TimeDim(Fraction(-3, 2))
DIFFUSION = TimeDim(-1)
RATE = TimeDim(-1)


def combine(dims: Sequence[TimeDim], weights: Sequence) -> TimeDim:
    """Dimension of prod(d_i ** w_i), computed exactly."""
    if len(dims) != len(weights):
        raise DimensionError(
            f"length mismatch: {len(dims)} dims vs {len(weights)} weights")
    total = Fraction(0)
    for d, w in zip(dims, weights):
        total += d.exponent * _frac(w)
    return TimeDim(total)


@dataclass(frozen=True)
class Quantity:
    value: float
    dim: TimeDim = DIMENSIONLESS

    def __add__(self, other: "Quantity") -> "Quantity":
        if self.dim != other.dim:
            raise DimensionError(f"cannot add {self.dim} and {other.dim}")
        return Quantity(self.value + other.value, self.dim)

    def __sub__(self, other: "Quantity") -> "Quantity":
        if self.dim != other.dim:
            raise DimensionError(f"cannot subtract {other.dim} from {self.dim}")
        return Quantity(self.value - other.value, self.dim)

    def __mul__(self, other: "Quantity") -> "Quantity":
        return Quantity(self.value * other.value, self.dim * other.dim)

    def __truediv__(self, other: "Quantity") -> "Quantity":
        return Quantity(self.value / other.value, self.dim / other.dim)

    def __pow__(self, p) -> "Quantity":
        p = _frac(p)
        return Quantity(self.value ** float(p), self.dim ** p)


@dataclass(frozen=True)
class DimCheck:
    name: str
    expected: Fraction
    actual: Fraction

    @property
    def passed(self) -> bool:
        return self.expected == self.actual

    def to_dict(self) -> dict:
        return {"check": self.name, "expected": str(self.expected),
                "actual": str(self.actual), "pass": self.passed}


@dataclass(frozen=True)
class DimReport:
    checks: tuple[DimCheck, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"pass": self.passed, "checks": [c.to_dict() for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def check_sde_dims(alpha_dim: TimeDim, beta_dim: TimeDim, sigma_dim: TimeDim,
                   param_dims: Sequence[TimeDim] = ()) -> DimReport:
    """Check the dimensions of d(sigma) = alpha dt + beta dW.

    Failures are report entries, never exceptions.
    """
    checks = [
        DimCheck("sigma", VOLATILITY.exponent, sigma_dim.exponent),
        DimCheck("alpha", DRIFT.exponent, alpha_dim.exponent),
        DimCheck("beta", DIFFUSION.exponent, beta_dim.exponent),
        # the SDE itself must balance: [alpha][dt] == [beta][dW] == [sigma]
        DimCheck("alpha*dt == sigma", sigma_dim.exponent,
                 (alpha_dim * TIME).exponent),
        DimCheck("beta*dW == sigma", sigma_dim.exponent,
                 (beta_dim * WIENER).exponent),
    ]
    for i, d in enumerate(param_dims):
        checks.append(DimCheck(f"r{i}", RATE.exponent, d.exponent))
    return DimReport(tuple(checks))


def _exponent_grid(max_den: int = 4, max_num: int = 8) -> list[Fraction]:
    vals = {Fraction(p, q) for q in range(1, max_den + 1)
            for p in range(-max_num, max_num + 1)}
    vals.discard(Fraction(0))
    # simplest first: small denominator, then small magnitude, negatives first
    return sorted(vals, key=lambda f: (f.denominator, abs(f.numerator), f > 0))


@dataclass(frozen=True)
class ReducedParam:
    names: tuple[str, ...]
    exponents: tuple[Fraction, ...]
    dim: TimeDim = RATE

    def expression(self) -> str:
        parts = [f"{n}^{e}" for n, e in zip(self.names, self.exponents) if e != 0]
        return " * ".join(parts)

    def value(self, values: Sequence[float]) -> float:
        out = 1.0
        for v, e in zip(values, self.exponents):
            if e != 0:
                out *= float(v) ** float(e)
        return out


def reduce_parameters(params: Sequence[tuple[str, TimeDim]],
                      max_den: int = 4, max_num: int = 8) -> ReducedParam:
    """Build a rate (dimension 1/T) as a monomial in the given parameters.

    The solution with the fewest parameters wins, lower indices first. With
    two or more parameters, the lowest-index one is given exponent -2: the
    others are first combined with it into a square-root-of-time quantity
    ``r0 * r1**gamma``, which is then inverted and squared. Only exponents
    p/q with q <= ``max_den`` and |p| <= ``max_num`` are searched.
    """
    names = tuple(n for n, _ in params)
    e = [d.exponent for _, d in params]
    n = len(e)
    if n == 0 or all(x == 0 for x in e):
        raise NoInverseTimeCombination("all parameters are dimensionless")
    grid = _exponent_grid(max_den, max_num)
    grid_set = set(grid)
    target = Fraction(-1)

    def pack(support, ws):
        out = [Fraction(0)] * n
        for i, w in zip(support, ws):
            out[i] = w
        return ReducedParam(names, tuple(out))

    for size in range(1, n + 1):
        for support in itertools.combinations(range(n), size):
            if size == 1:
                (i,) = support
                if e[i] != 0 and target / e[i] in grid_set:
                    return pack(support, [target / e[i]])
                continue
            # pinned leading exponent, then fewest-free search on the rest
            lead, rest = support[0], support[1:]
            pinned = Fraction(-2)
            for ws in itertools.product(grid, repeat=len(rest) - 1):
                resid = target - pinned * e[lead] - sum(
                    w * e[j] for w, j in zip(ws, rest[:-1]))
                last = rest[-1]
                if e[last] == 0:
                    continue
                w_last = resid / e[last]
                if w_last in grid_set:
                    return pack(support, [pinned, *ws, w_last])
            for ws in itertools.product(grid, repeat=size):
                if sum(w * e[j] for w, j in zip(ws, support)) == target:
                    return pack(support, list(ws))
    raise NoInverseTimeCombination(
        f"no rate found with exponent denominators <= {max_den} and "
        f"|numerators| <= {max_num}")


def nondimensionalize(alpha_fn: Callable, beta_fn: Callable, r0: float,
                      x_grid) -> tuple[np.ndarray, np.ndarray]:
    """Recover f, g from alpha = sigma^3 f(r0/sigma^2), beta = sigma^2 g(r0/sigma^2).

    Returns ``(f, g)`` sampled on ``x_grid``.
    """
    x = np.asarray(x_grid, dtype=float)
    if r0 <= 0:
        raise DimensionError("r0 must be positive")
    if np.any(x <= 0):
        raise DimensionError("x_grid must be positive")
    sigma = np.sqrt(r0 / x)
    f = np.asarray(alpha_fn(sigma), dtype=float) * sigma ** -3
    g = np.asarray(beta_fn(sigma), dtype=float) * sigma ** -2
    return f, g
