"""Monte Carlo integration of the volatility SDE and the joint price process.

Default scheme ("reciprocal-euler") works with v = 1/sigma. By Ito's formula

    dv = -alpha(1/v) v^2 dt + c(v)^2 / v dt - c(v) dW2,   c(v) = beta(1/v) v^2,

and for the built-in model c = B is constant. The pair (c^2/v dt - c dW2) is a
Bessel process of dimension 3 scaled by c, i.e. the norm of a 3-d Brownian
motion; it is sampled exactly by carrying a 3-vector Y with |Y| = v. The
remaining drift -alpha v^2 = A r0 v - k r0^1.5 v^2 is a logistic ODE, solved
exactly. The two flows are composed once per step (Lie splitting, weak order
one). For user-supplied coefficient pairs c is frozen over the step and the
drift flow uses a tamed explicit step.

Random numbers: four standard normals per path per step, drawn from one
Philox stream per block of ``PATH_BLOCK`` paths; the stream of block b is a
pure function of (seed, b). Output therefore does not depend on the number of
worker threads or on chunking.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Optional

import numpy as np
from numba import njit

from .model import VolModel

PATH_BLOCK = 4096
N_NORMALS = 4
SCHEMES = ("reciprocal-euler", "tamed-euler")


class SimError(ValueError):
    pass


class SchemeUnstable(SimError):
    pass


@dataclass(frozen=True)
class SimSpec:
    n_paths: int = 64
    n_steps: int = 1000
    dt_sim: float = 0.025
    burn_in_steps: int = 0
    sigma0: float = 0.2
    s0: float = 100.0
    seed: int = 12345
    scheme: str = "reciprocal-euler"
    sigma_floor: float = 2e-4
    sigma_cap: float = 200.0
    record_every: int = 1
    n_workers: int = 1

    def __post_init__(self):
        if self.n_paths <= 0 or self.n_steps <= 0 or self.burn_in_steps < 0:
            raise SimError("counts must be positive")
        if not self.dt_sim > 0:
            raise SimError("dt_sim must be > 0")
        if self.scheme not in SCHEMES:
            raise SimError(f"unknown scheme {self.scheme!r}")
        frozen = self.sigma_floor == self.sigma_cap
        if frozen:
            if self.sigma0 != self.sigma_floor:
                raise SimError("frozen volatility needs sigma_floor == sigma0 == sigma_cap")
        elif not (0 < self.sigma_floor < self.sigma0 < self.sigma_cap):
            raise SimError("need 0 < sigma_floor < sigma0 < sigma_cap")
        if self.record_every < 1 or self.n_steps % self.record_every:
            raise SimError("record_every must divide n_steps")

    @property
    def frozen(self) -> bool:
        return self.sigma_floor == self.sigma_cap

    @classmethod
    def default(cls, model: VolModel, **overrides) -> "SimSpec":
        """Defaults scaled to the model's rate r0.

        reciprocal-euler: dt_sim = 1e-3 / r0. tamed-euler: dt_sim with
        B^2 sigma_cap^2 dt_sim = 0.01. Burn-in covers 20 relaxation times.
        """
        p = model.params
        scheme = overrides.get("scheme", "reciprocal-euler")
        sq = math.sqrt(p.r0)
        floor = overrides.get("sigma_floor", 1e-3 * sq)
        cap = overrides.get("sigma_cap", 1e3 * sq)
        if "dt_sim" in overrides:
            dt = overrides["dt_sim"]
        elif scheme == "reciprocal-euler":
            dt = 1e-3 / p.r0
        else:
            dt = 0.01 / (max(p.B, 1e-12) ** 2 * cap ** 2)
        rate = max(p.A, p.k, 1e-12 if (p.A or p.k) else 1.0) * p.r0
        burn = int(math.ceil(20.0 / (rate * dt)))
        kw = dict(dt_sim=dt, burn_in_steps=burn, sigma0=sq, sigma_floor=floor,
                  sigma_cap=cap, scheme=scheme)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PathEnsemble:
    sigma_paths: np.ndarray
    spec: SimSpec
    times: np.ndarray
    s_paths: Optional[np.ndarray] = None
    w2_paths: Optional[np.ndarray] = None
    floor_hits: int = 0
    cap_hits: int = 0
    path_steps: int = 0
    rng_note: str = ""

    @property
    def cap_fraction(self) -> float:
        return self.cap_hits / max(self.path_steps, 1)

    @property
    def floor_fraction(self) -> float:
        return self.floor_hits / max(self.path_steps, 1)

    def to_csv(self) -> str:
        """One row per (path, recorded step): path, t, sigma[, S]."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        header = ["path", "t", "sigma"] + (["S"] if self.s_paths is not None else [])
        wr.writerow(header)
        for i in range(self.sigma_paths.shape[0]):
            for j, t in enumerate(self.times):
                row = [i, repr(float(t)), repr(float(self.sigma_paths[i, j]))]
                if self.s_paths is not None:
                    row.append(repr(float(self.s_paths[i, j])))
                wr.writerow(row)
        return buf.getvalue()

    def to_binary(self) -> bytes:
        """Little-endian dump.

        Header: magic b"VTPE", uint32 version=1, uint32 n_paths, uint32 n_times,
        uint32 has_s. Body: float64 times[n_times], then sigma row-major
        (n_paths x n_times), then S row-major if has_s.
        """
        n, m = self.sigma_paths.shape
        has_s = self.s_paths is not None
        out = [b"VTPE", struct.pack("<IIII", 1, n, m, int(has_s)),
               np.asarray(self.times, "<f8").tobytes(),
               np.ascontiguousarray(self.sigma_paths, "<f8").tobytes()]
        if has_s:
            out.append(np.ascontiguousarray(self.s_paths, "<f8").tobytes())
        return b"".join(out)

    @staticmethod
    def read_binary(data: bytes) -> dict:
        if data[:4] != b"VTPE":
            raise SimError("not a path-ensemble dump")
        _, n, m, has_s = struct.unpack("<IIII", data[4:20])
        off = 20
        times = np.frombuffer(data, "<f8", m, off); off += 8 * m
        sig = np.frombuffer(data, "<f8", n * m, off).reshape(n, m); off += 8 * n * m
        s = np.frombuffer(data, "<f8", n * m, off).reshape(n, m) if has_s else None
        return {"times": times, "sigma": sig, "S": s}


def block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


RNG_NOTE = (f"Philox per block of {PATH_BLOCK} paths, key = SeedSequence(seed, spawn_key=(block,)); "
            f"{N_NORMALS} normals per path per step, step-major")


@njit(cache=True, nogil=True)
def _log_reflect(v, lo, hi):
    hit_lo = 0
    hit_hi = 0
    if v < lo:
        v = lo * lo / v
        hit_lo = 1
        if v > hi:
            v = hi
    elif v > hi:
        v = hi * hi / v
        hit_hi = 1
        if v < lo:
            v = lo
    return v, hit_lo, hit_hi


@njit(cache=True, nogil=True)
def _kernel_reciprocal(Y, logS, w2, noise, dt, a, b, c, vlo, vhi, rho, mu,
                       record_every, rec_sig, rec_ls, rec_w2, counters):
    """Advance a block of built-in-model paths through noise.shape[0] steps.

    v = |Y|; Bessel flow Y += c sqrt(dt) Z; logistic flow v' = a v - b v^2.
    counters: [sigma floor hits, sigma cap hits]. Record arrays with zero rows
    are skipped.
    """
    n_steps = noise.shape[0]
    n = noise.shape[1]
    sdt = math.sqrt(dt)
    phi = math.expm1(a * dt) / a if a > 0.0 else dt
    rho_c = math.sqrt(max(1.0 - rho * rho, 0.0))
    for j in range(n):
        y0 = Y[j, 0]
        y1 = Y[j, 1]
        y2 = Y[j, 2]
        ls = logS[j]
        wacc = w2[j]
        v = math.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
        for i in range(n_steps):
            sig = 1.0 / v
            z0 = noise[i, j, 0]
            z1 = noise[i, j, 1]
            z2 = noise[i, j, 2]
            dw2 = -(y0 * z0 + y1 * z1 + y2 * z2) / v * sdt
            dw1 = rho * dw2 + rho_c * noise[i, j, 3] * sdt
            ls += (mu - 0.5 * sig * sig) * dt + sig * dw1
            wacc += dw2
            y0 += c * sdt * z0
            y1 += c * sdt * z1
            y2 += c * sdt * z2
            v1 = math.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
            v2 = v1 * (1.0 + a * phi) / (1.0 + b * v1 * phi)
            v, hlo, hhi = _log_reflect(v2, vlo, vhi)
            # v below vlo means sigma above the cap
            counters[1] += hlo
            counters[0] += hhi
            scale = v / v1
            y0 *= scale
            y1 *= scale
            y2 *= scale
            if (i + 1) % record_every == 0:
                k = (i + 1) // record_every - 1
                if rec_sig.shape[0] > 0:
                    rec_sig[j, k] = 1.0 / v
                if rec_ls.shape[0] > 0:
                    rec_ls[j, k] = ls
                if rec_w2.shape[0] > 0:
                    rec_w2[j, k] = wacc
        Y[j, 0] = y0
        Y[j, 1] = y1
        Y[j, 2] = y2
        logS[j] = ls
        w2[j] = wacc


def _generic_steps(model: VolModel, spec: SimSpec, st: dict, noise, rec_sig, rec_ls, rec_w2,
                   counters):
    """Numpy stepping for user-supplied coefficient pairs and the tamed scheme."""
    p = model.params
    dt = spec.dt_sim
    sdt = math.sqrt(dt)
    rho_c = math.sqrt(max(1.0 - p.rho ** 2, 0.0))
    lo, hi = spec.sigma_floor, spec.sigma_cap
    Y, ls, w = st["Y"], st["logS"], st["w2"]
    for i in range(noise.shape[0]):
        z = noise[i]
        v = np.sqrt(np.sum(Y * Y, axis=1))
        sig = 1.0 / v
        if spec.scheme == "reciprocal-euler":
            dw2 = -np.sum(Y * z[:, :3], axis=1) / v * sdt
            c = model.beta(sig) * v * v
            Y = Y + (c * sdt)[:, None] * z[:, :3]
            v1 = np.sqrt(np.sum(Y * Y, axis=1))
            d = -model.alpha(1.0 / v1) * v1 * v1
            v2 = v1 + d * dt / (1.0 + dt * np.abs(d) / v1)
            new_sig = 1.0 / np.maximum(v2, 1e-300)
        else:
            dw2 = z[:, 0] * sdt
            al = model.alpha(sig)
            be = model.beta(sig)
            inc = al * dt + be * dw2
            new_sig = sig + inc / (1.0 + dt * np.abs(al) / sig + sdt * np.abs(be) / sig)
            new_sig = np.where(new_sig > 0, new_sig, lo)
        below = new_sig < lo
        above = new_sig > hi
        counters[0] += int(below.sum())
        counters[1] += int(above.sum())
        new_sig = np.where(below, lo * lo / new_sig, new_sig)
        new_sig = np.where(above, hi * hi / new_sig, new_sig)
        new_sig = np.clip(new_sig, lo, hi)
        if spec.scheme == "reciprocal-euler":
            Y = Y * ((1.0 / new_sig) / v1)[:, None]
        else:
            Y = np.zeros_like(Y)
            Y[:, 0] = 1.0 / new_sig
        dw1 = p.rho * dw2 + rho_c * z[:, 3] * sdt
        ls = ls + (p.mu - 0.5 * sig ** 2) * dt + sig * dw1
        w = w + dw2
        if (i + 1) % spec.record_every == 0:
            k = (i + 1) // spec.record_every - 1
            if rec_sig.shape[0]:
                rec_sig[:, k] = new_sig
            if rec_ls.shape[0]:
                rec_ls[:, k] = ls
            if rec_w2.shape[0]:
                rec_w2[:, k] = w
    st["Y"], st["logS"], st["w2"] = Y, ls, w


def _frozen_steps(model, spec, st, noise, rec_sig, rec_ls, rec_w2):
    """Constant volatility: floor == sigma0 == cap."""
    p = model.params
    dt = spec.dt_sim
    sdt = math.sqrt(dt)
    rho_c = math.sqrt(max(1.0 - p.rho ** 2, 0.0))
    sig = spec.sigma0
    dw2 = noise[:, :, 0] * sdt
    dw1 = p.rho * dw2 + rho_c * noise[:, :, 3] * sdt
    inc = (p.mu - 0.5 * sig ** 2) * dt + sig * dw1
    ls = st["logS"][None, :] + np.cumsum(inc, axis=0)
    w = st["w2"][None, :] + np.cumsum(dw2, axis=0)
    idx = np.arange(spec.record_every - 1, noise.shape[0], spec.record_every)
    if rec_sig.shape[0]:
        rec_sig[:] = sig
    if rec_ls.shape[0]:
        rec_ls[:] = ls[idx].T
    if rec_w2.shape[0]:
        rec_w2[:] = w[idx].T
    st["logS"], st["w2"] = ls[-1].copy(), w[-1].copy()


_EMPTY = np.empty((0, 0))
CHUNK_ELEMS = 1 << 22


def _advance(model, spec, st, rng, n_steps, counters, rec_sig, rec_ls, rec_w2):
    """Run n_steps on a block, filling record arrays (or _EMPTY)."""
    n = st["logS"].size
    p = model.params
    use_kernel = model.is_builtin and spec.scheme == "reciprocal-euler" and not spec.frozen
    re = spec.record_every if rec_sig is not None else 1
    step_cap = max(re, (CHUNK_ELEMS // (n * N_NORMALS)) // re * re)
    done = 0
    while done < n_steps:
        m = min(step_cap, n_steps - done)
        noise = rng.standard_normal((m, n, N_NORMALS))
        if rec_sig is None:
            cs = cl = cw = _EMPTY
        else:
            k0, k1 = done // re, (done + m) // re
            cs = rec_sig[:, k0:k1] if rec_sig.shape[0] else _EMPTY
            cl = rec_ls[:, k0:k1] if rec_ls.shape[0] else _EMPTY
            cw = rec_w2[:, k0:k1] if rec_w2.shape[0] else _EMPTY
            # kernel writes need contiguous buffers
            cs, cl, cw = (np.ascontiguousarray(a) for a in (cs, cl, cw))
        if spec.frozen:
            _frozen_steps(model, spec, st, noise, cs, cl, cw)
        elif use_kernel:
            _kernel_reciprocal(st["Y"], st["logS"], st["w2"], noise, spec.dt_sim,
                               p.A * p.r0, p.k * p.r0 ** 1.5, p.B,
                               1.0 / spec.sigma_cap, 1.0 / spec.sigma_floor,
                               p.rho, p.mu, re, cs, cl, cw, counters)
        else:
            _generic_steps(model, spec, st, noise, cs, cl, cw, counters)
        if rec_sig is not None:
            k0, k1 = done // re, (done + m) // re
            if rec_sig.shape[0]:
                rec_sig[:, k0:k1] = cs
            if rec_ls.shape[0]:
                rec_ls[:, k0:k1] = cl
            if rec_w2.shape[0]:
                rec_w2[:, k0:k1] = cw
        done += m


def _current_sigma(st, spec) -> np.ndarray:
    if spec.frozen:
        return np.full(st["logS"].shape, float(spec.sigma0))
    return 1.0 / np.sqrt(np.sum(st["Y"] ** 2, axis=1))


def _init_state(spec, sigma_init):
    n = sigma_init.size
    st = {"Y": np.zeros((n, 3)), "logS": np.full(n, math.log(spec.s0)), "w2": np.zeros(n)}
    if not spec.frozen:
        st["Y"][:, 0] = 1.0 / sigma_init
    return st


def _run_block(model, spec, block, sigma_init, record, joint, record_noise, hist_edges):
    rng = block_generator(spec.seed, block)
    st = _init_state(spec, sigma_init)
    counters = np.zeros(2, dtype=np.int64)
    n = sigma_init.size
    _advance(model, spec, st, rng, spec.burn_in_steps, counters, None, None, None)
    st["logS"][:] = math.log(spec.s0)
    st["w2"][:] = 0.0
    s_start = _current_sigma(st, spec)
    n_rec = spec.n_steps // spec.record_every
    out = {"counters": counters, "hist": None, "sigma": None, "logS": None, "w2": None}
    want_sig = record or hist_edges is not None
    rec_sig = np.empty((n, n_rec)) if want_sig else _EMPTY
    rec_ls = np.empty((n, n_rec)) if (record and joint) else _EMPTY
    rec_w2 = np.empty((n, n_rec)) if (record and record_noise) else _EMPTY
    if hist_edges is not None and not record:
        # stream: keep only one chunk of sigma at a time
        hist = np.histogram(s_start, bins=hist_edges)[0].astype(np.int64)
        step_cap = max(spec.record_every,
                       (CHUNK_ELEMS // (n * N_NORMALS)) // spec.record_every * spec.record_every)
        done = 0
        while done < spec.n_steps:
            m = min(step_cap, spec.n_steps - done)
            buf = np.empty((n, m // spec.record_every))
            _advance(model, spec, st, rng, m, counters, buf, _EMPTY, _EMPTY)
            hist += np.histogram(buf, bins=hist_edges)[0]
            done += m
        out["hist"] = hist
    else:
        _advance(model, spec, st, rng, spec.n_steps, counters, rec_sig, rec_ls, rec_w2)
        if record:
            out["sigma"] = np.concatenate([s_start[:, None], rec_sig], axis=1)
            if joint:
                out["logS"] = np.concatenate([np.full((n, 1), math.log(spec.s0)), rec_ls], axis=1)
            if record_noise:
                out["w2"] = np.concatenate([np.zeros((n, 1)), rec_w2], axis=1)
        if hist_edges is not None:
            out["hist"] = np.histogram(out["sigma"], bins=hist_edges)[0].astype(np.int64)
    out["final_logS"] = st["logS"].copy()
    out["final_sigma"] = _current_sigma(st, spec)
    return out


def _blocks(n_paths):
    return [(b, b * PATH_BLOCK, min((b + 1) * PATH_BLOCK, n_paths))
            for b in range((n_paths + PATH_BLOCK - 1) // PATH_BLOCK)]


def _run(model, spec, sigma_init=None, record=True, joint=False, record_noise=False,
         hist_edges=None):
    if sigma_init is None:
        sigma_init = np.full(spec.n_paths, float(spec.sigma0))
    sigma_init = np.asarray(sigma_init, dtype=float)
    if sigma_init.size != spec.n_paths:
        raise SimError("sigma_init length must equal n_paths")
    blocks = _blocks(spec.n_paths)
    job = lambda blk: _run_block(model, spec, blk[0], sigma_init[blk[1]:blk[2]], record,
                                 joint, record_noise, hist_edges)
    if spec.n_workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(spec.n_workers) as ex:
            parts = list(ex.map(job, blocks))
    else:
        parts = [job(b) for b in blocks]
    counters = sum(p["counters"] for p in parts)
    path_steps = spec.n_paths * (spec.burn_in_steps + spec.n_steps)
    if not spec.frozen and counters[1] > 1e-3 * path_steps:
        raise SchemeUnstable(
            f"{counters[1]} of {path_steps} steps hit sigma_cap (> 0.1%)")
    return parts, counters, path_steps


def _ensemble(spec, parts, counters, path_steps, joint, record_noise) -> PathEnsemble:
    times = spec.dt_sim * spec.record_every * np.arange(spec.n_steps // spec.record_every + 1)
    return PathEnsemble(
        sigma_paths=np.concatenate([p["sigma"] for p in parts]),
        spec=spec, times=times,
        s_paths=np.exp(np.concatenate([p["logS"] for p in parts])) if joint else None,
        w2_paths=np.concatenate([p["w2"] for p in parts]) if record_noise else None,
        floor_hits=int(counters[0]), cap_hits=int(counters[1]), path_steps=path_steps,
        rng_note=RNG_NOTE)


def simulate_volatility(model: VolModel, spec: SimSpec, sigma_init=None) -> PathEnsemble:
    """Simulate volatility paths; recording starts after the burn-in steps."""
    parts, counters, path_steps = _run(model, spec, sigma_init)
    return _ensemble(spec, parts, counters, path_steps, False, False)


def simulate_joint(model: VolModel, spec: SimSpec, sigma_init=None,
                   record_noise: bool = False) -> PathEnsemble:
    """Simulate volatility and price together.

    The price takes the exact lognormal step with volatility frozen over each
    dt_sim; dW1 = rho dW2 + sqrt(1 - rho^2) dW_perp. The volatility paths are
    identical to :func:`simulate_volatility` for the same spec.
    """
    parts, counters, path_steps = _run(model, spec, sigma_init, joint=True,
                                       record_noise=record_noise)
    return _ensemble(spec, parts, counters, path_steps, True, record_noise)


def simulate_histogram(model: VolModel, spec: SimSpec, edges, sigma_init=None):
    """Histogram of post-burn-in volatility without storing paths.

    Returns ``(counts, n_samples, cap_fraction)``.
    """
    edges = np.asarray(edges, dtype=float)
    parts, counters, path_steps = _run(model, spec, sigma_init, record=False, hist_edges=edges)
    counts = sum(p["hist"] for p in parts)
    n = spec.n_paths * (spec.n_steps // spec.record_every + 1)
    return counts, n, counters[1] / path_steps


def sample_returns_approx(sigma_samples, dt: float, seed) -> np.ndarray:
    """X_i = sigma_i sqrt(dt) Z_i with independent standard normals Z_i."""
    if not dt > 0:
        raise SimError("dt must be > 0")
    s = np.asarray(sigma_samples, dtype=float)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    z = rng.standard_normal(s.shape)
    return s * math.sqrt(dt) * z


def sample_returns_exact(model: VolModel, dt: float, n: int, spec: SimSpec,
                         sigma_init=None) -> np.ndarray:
    """Exact log returns ln S(dt)/S(0) over independent windows of length dt.

    Each window starts from a stationary volatility draw (``sigma_init``, or
    the model's stationary density sampled with ``spec.seed``) and evolves
    volatility and price jointly with step ``spec.dt_sim``.
    """
    if dt < spec.dt_sim * (1 - 1e-12):
        raise SimError("dt must be >= dt_sim")
    m = int(round(dt / spec.dt_sim))
    if abs(m * spec.dt_sim - dt) > 1e-9 * dt:
        raise SimError("dt must be a multiple of dt_sim")
    if sigma_init is None:
        from .density import inverse_cdf_sampler, stationary_density
        sigma_init = inverse_cdf_sampler(stationary_density(model), n, (spec.seed, 1))
    wspec = replace(spec, n_paths=n, n_steps=m, burn_in_steps=0, record_every=m,
                    sigma0=float(np.clip(np.median(sigma_init),
                                         spec.sigma_floor * 1.0001, spec.sigma_cap * 0.9999)))
    sigma_init = np.clip(sigma_init, spec.sigma_floor, spec.sigma_cap)
    parts, _, _ = _run(model, wspec, sigma_init, record=False)
    return np.concatenate([p["final_logS"] for p in parts]) - math.log(spec.s0)
