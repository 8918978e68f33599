"""Price-series ingestion: CSV parsing, grid resampling, return tails.

Prices are sampled on a grid anchored at the first timestamp, taking the
last observation at or before each grid point. Anchoring at the first
observation makes the returns invariant under a constant time shift.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional, Sequence

import numpy as np

from .estimators import EstimatorError, FitResult, hill, loglog_slope
from .tails import TailCurve, TailError, audited_window, tail_from_samples

_US = 1_000_000


class IngestError(ValueError):
    pass


class IngestWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PriceSeries:
    """UTC timestamps in integer microseconds, strictly increasing; positive prices."""

    t_us: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        if self.t_us.size != self.prices.size:
            raise IngestError("timestamps and prices differ in length")
        if self.t_us.size < 2:
            raise IngestError("need at least two observations")
        if np.any(np.diff(self.t_us) <= 0):
            i = int(np.argmax(np.diff(self.t_us) <= 0)) + 1
            raise IngestError(f"timestamps not strictly increasing at observation {i}")
        if np.any(~(self.prices > 0)):
            raise IngestError("prices must be positive")

    def gaps(self, max_gap_minutes: float) -> np.ndarray:
        """Indices i with t[i+1] - t[i] longer than the threshold."""
        return np.flatnonzero(np.diff(self.t_us) > max_gap_minutes * 60 * _US)

    def shifted(self, minutes: float) -> "PriceSeries":
        return PriceSeries(self.t_us + int(round(minutes * 60 * _US)), self.prices)


def _parse_time(s: str) -> int:
    s = s.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    delta = ts - datetime(1970, 1, 1, tzinfo=timezone.utc)
    return (delta.days * 86400 + delta.seconds) * _US + delta.microseconds


def parse_prices(text: str) -> PriceSeries:
    """Parse CSV text with header ``timestamp,price``.

    All bad rows are collected and reported together with their line numbers.
    """
    rows = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(rows)]
    except StopIteration:
        raise IngestError("empty CSV") from None
    if header != ["timestamp", "price"]:
        raise IngestError(f"header must be 'timestamp,price', got {','.join(header)!r}")
    ts, ps, bad = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) != 2:
                raise ValueError("expected 2 fields")
            t = _parse_time(row[0])
            p = float(row[1])
            if not (p > 0 and math.isfinite(p)):
                raise ValueError("price must be positive and finite")
        except ValueError as exc:
            bad.append(f"line {lineno}: {exc}")
            continue
        ts.append(t)
        ps.append(p)
    if bad:
        shown = "; ".join(bad[:10]) + (f"; ... ({len(bad)} bad rows)" if len(bad) > 10 else "")
        raise IngestError(f"unparseable rows: {shown}")
    return PriceSeries(np.array(ts, dtype=np.int64), np.array(ps, dtype=float))


def read_prices(path) -> PriceSeries:
    with open(path, encoding="utf-8") as fh:
        return parse_prices(fh.read())


def format_prices(t_us, prices) -> str:
    """Inverse of :func:`parse_prices` (UTC, microsecond ISO-8601)."""
    buf = io.StringIO()
    buf.write("timestamp,price\n")
    epoch = np.datetime64("1970-01-01T00:00:00", "us")
    stamps = np.datetime_as_string(epoch + np.asarray(t_us).astype("timedelta64[us]"), unit="us")
    for s, p in zip(stamps, prices):
        buf.write(f"{s}Z,{float(p)!r}\n")
    return buf.getvalue()


@dataclass(frozen=True)
class ReturnSample:
    returns: np.ndarray
    dt_minutes: float
    n_excluded: int
    overlapping: bool
    mean_removed: float = 0.0
    n_empty: int = 0


def resample_returns(series: PriceSeries, dt_minutes: float, overlapping: bool = False,
                     max_gap_minutes: Optional[float] = None,
                     subtract_mean: bool = False) -> ReturnSample:
    """Log returns over dt on the last-price-before-gridpoint grid.

    A return is excluded (and counted) when an inter-observation interval
    overlapping its span is longer than ``max_gap_minutes`` (default: dt)
    and the span still holds a price change. Windows lying wholly inside a
    gap carry no return and are counted as empty. With
    ``overlapping`` every observation starts a return, so consecutive
    returns share data and standard errors are too small.
    """
    if not dt_minutes > 0:
        raise IngestError("dt must be > 0")
    step = int(round(dt_minutes * 60 * _US))
    gap = step if max_gap_minutes is None else int(round(max_gap_minutes * 60 * _US))
    t, lp = series.t_us, np.log(series.prices)
    if overlapping:
        starts = t[t + step <= t[-1]]
    else:
        starts = t[0] + step * np.arange((t[-1] - t[0]) // step)
    ends = starts + step
    i0 = np.searchsorted(t, starts, side="right") - 1
    i1 = np.searchsorted(t, ends, side="right") - 1
    bad = np.concatenate([[0], np.cumsum(np.diff(t) > gap)])
    # intervals i0 .. i1 overlap the span; interval i1 only if it starts before the end
    hi = np.minimum(i1 + (t[i1] < ends), t.size - 1)
    n_bad = bad[hi] - bad[i0]
    keep = n_bad == 0
    empty = ~keep & (i1 == i0)
    r = lp[i1[keep]] - lp[i0[keep]]
    m = 0.0
    if subtract_mean and r.size:
        m = float(r.mean())
        r = r - m
    return ReturnSample(r, float(dt_minutes), int((~keep & ~empty).sum()), overlapping, m,
                        int(empty.sum()))


@dataclass
class DtResult:
    dt_minutes: float
    n_returns: int
    n_excluded: int
    curve: Optional[TailCurve] = None
    hill: Optional[FitResult] = None
    loglog: Optional[FitResult] = None
    skipped: bool = False
    notes: list = field(default_factory=list)

    def summary(self) -> dict:
        d = {"dt_minutes": self.dt_minutes, "n_returns": self.n_returns,
             "n_excluded": self.n_excluded, "skipped": self.skipped, "notes": list(self.notes)}
        if self.hill is not None:
            d["hill"] = self.hill.to_dict()
        if self.loglog is not None:
            d["loglog"] = self.loglog.to_dict()
        return d


def tail_nodes(abs_returns: np.ndarray, per_decade: int = 20) -> np.ndarray:
    """Log-spaced nodes from the median to the maximum of |X|."""
    a = abs_returns[abs_returns > 0]
    lo, hi = float(np.median(a)), float(a.max())
    n = max(int(math.ceil(per_decade * math.log10(hi / lo))) + 1, 2)
    return np.logspace(math.log10(lo), math.log10(hi), n)


def analyse_returns(sample: ReturnSample, dt_years: float, min_returns: int = 1000,
                    per_decade: int = 20) -> DtResult:
    res = DtResult(sample.dt_minutes, int(sample.returns.size), sample.n_excluded)
    a = np.abs(sample.returns)
    if a.size < min_returns:
        res.skipped = True
        res.notes.append(f"only {a.size} returns (< {min_returns}); fit skipped")
    elif np.count_nonzero(a) < min_returns // 10 + 10:
        res.skipped = True
        res.notes.append("returns are (almost) all zero; fit skipped")
    if res.skipped:
        warnings.warn(f"dt={sample.dt_minutes:g} min: {res.notes[-1]}", IngestWarning,
                      stacklevel=2)
        return res
    x = tail_nodes(a, per_decade)
    res.curve = tail_from_samples(sample.returns, x, dt_years, source="empirical")
    try:
        res.hill = hill(a)
    except EstimatorError as exc:
        res.notes.append(f"hill: {exc}")
    try:
        res.loglog = loglog_slope(res.curve.x_nodes, res.curve.pbar_values,
                                  audited_window(res.curve))
    except (EstimatorError, TailError) as exc:
        res.notes.append(f"loglog: {exc}")
    return res


def ingest(series: PriceSeries, dt_minutes: Sequence[float], minutes_per_year: float,
           subtract_mean: bool = False, overlapping: bool = False,
           max_gap_minutes: Optional[float] = None, min_returns: int = 1000,
           per_decade: int = 20) -> list[DtResult]:
    out = []
    for dtm in dt_minutes:
        s = resample_returns(series, dtm, overlapping, max_gap_minutes, subtract_mean)
        r = analyse_returns(s, dtm / minutes_per_year, min_returns, per_decade)
        if overlapping:
            r.notes.append("overlapping windows: confidence bands are not valid")
        out.append(r)
    return out
