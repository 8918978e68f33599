"""Command implementations. Each returns (summary dict, {filename: text}).

Nothing here touches the filesystem except reading ingest input; writing,
manifests and exit codes live in :mod:`voltail.cli`.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Callable

import numpy as np
import sympy as sp

from . import density as dens
from . import ingest as ing
from . import tails
from .config import ConfigError, ExperimentConfig
from .model import (CoefficientPair, ModelParams, VolModel, asymptotic_coeffs, builtin_coeffs,
                    default_sigma_grid, regime_diagnostics, validate_stylized_facts)
from .sim import (SimSpec, sample_returns_exact, simulate_histogram, simulate_joint,
                  simulate_volatility)


def _expr_fn(text: str) -> Callable:
    x = sp.Symbol("x", positive=True)
    try:
        expr = sp.sympify(text, locals={"x": x})
    except (sp.SympifyError, SyntaxError, TypeError) as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from None
    extra = expr.free_symbols - {x}
    if extra:
        raise ValueError(f"expression {text!r} has unknown symbols {sorted(map(str, extra))}")
    fn = sp.lambdify(x, expr, "numpy")
    return lambda v: np.broadcast_to(np.asarray(fn(np.asarray(v, dtype=float)), dtype=float),
                                     np.shape(v)).copy()


def build_model(cfg: ExperimentConfig) -> VolModel:
    m = cfg.model
    params = ModelParams(A=m.A, B=m.B, k=m.k, r0=m.r0, rho=m.rho, mu=m.mu)
    if m.f is None and m.g is None:
        return VolModel(params)
    base = builtin_coeffs(params)
    pair = CoefficientPair(f=_expr_fn(m.f) if m.f is not None else base.f,
                           g=_expr_fn(m.g) if m.g is not None else base.g, name="custom")
    return VolModel(params, pair)


def build_spec(cfg: ExperimentConfig, model: VolModel, **extra) -> SimSpec:
    s = cfg.sim
    kw = {k: getattr(s, k) for k in ("n_paths", "n_steps", "s0", "scheme", "record_every",
                                       "n_workers")}
    for k in ("dt_sim", "burn_in_steps", "sigma0", "sigma_floor", "sigma_cap"):
        if getattr(s, k) is not None:
            kw[k] = getattr(s, k)
    kw["seed"] = cfg.seed
    kw.update(extra)
    return SimSpec.default(model, **kw)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _fmt_dt(m: float) -> str:
    return f"{m:g}".replace(".", "p")


# -- validate ---------------------------------------------------------------

def run_validate(cfg: ExperimentConfig, check: bool = False):
    model = build_model(cfg)
    p = model.params
    summary = {"dims": model.dims_report().to_dict()}
    asym = asymptotic_coeffs(model.coeffs, raise_on_violation=False)
    conds = []
    if not asym.f0_ok:
        conds.append(f"f(0) != 0 (estimated {asym.f0:.6g})")
    if not asym.fprime_ok:
        conds.append(f"f'(0) > 0 (estimated {asym.fprime0:.6g})")
    if not asym.g0_ok:
        conds.append(f"g(0) <= 0 (estimated {asym.g0:.6g})")
    summary["asymptotics"] = {"A": asym.A, "B": asym.B, "f0": asym.f0, "fprime0": asym.fprime0,
                              "g0": asym.g0, "ok": asym.ok, "violations": conds}
    grid = default_sigma_grid(p.r0)
    sf = validate_stylized_facts(p, model.coeffs, float(grid[len(grid) // 2]), grid)
    summary["stylized_facts"] = sf.to_dict()
    sig_max = math.sqrt(cfg.density.window[1] * p.r0)
    dt = cfg.minutes_to_years(min(cfg.tails.dt_minutes))
    summary["regime"] = regime_diagnostics(sig_max, p.r0, dt).to_dict()
    failures = list(conds)
    if not summary["dims"]["pass"]:
        failures.append("dimension check failed")
    if not sf.ok:
        failures.append("stylized facts violated")
    summary["ok"] = not failures
    summary["failures"] = failures
    return summary, {}, failures


# -- simulate ---------------------------------------------------------------

def run_simulate(cfg: ExperimentConfig, check: bool = False):
    model = build_model(cfg)
    spec = build_spec(cfg, model)
    ens = simulate_joint(model, spec) if cfg.sim.joint else simulate_volatility(model, spec)
    s = ens.sigma_paths[:, 1:] if ens.sigma_paths.shape[1] > 1 else ens.sigma_paths
    summary = {"spec": spec.to_dict(), "rng": ens.rng_note,
               "cap_fraction": ens.cap_fraction, "floor_fraction": ens.floor_fraction,
               "sigma2_over_r0_mean": float(np.mean(s ** 2) / model.params.r0),
               "shape": list(ens.sigma_paths.shape)}
    return summary, {"paths.csv": ens.to_csv(), "paths.bin": ens.to_binary()}, []


# -- density ----------------------------------------------------------------

def _window(cfg, r0):
    lo, hi = cfg.density.window
    return math.sqrt(lo * r0), math.sqrt(hi * r0)


def run_density(cfg: ExperimentConfig, check: bool = False):
    model = build_model(cfg)
    p = model.params
    d = cfg.density
    grid = dens.log_grid(p.r0, d.lo, d.hi, d.n_nodes)
    win = _window(cfg, p.r0)
    files, summary, failures = {}, {"window_sigma": list(win)}, []
    sources = {}
    if model.is_builtin and p.k > 0:
        sources["closed-form"] = dens.closed_form_stationary(p, grid)
    sources["fpe"] = dens.solve_stationary_fpe(model, grid)
    edges = dens.default_edges(p.r0, per_decade=d.per_decade)
    spec = build_spec(cfg, model, n_paths=d.hist_paths, n_steps=d.hist_steps, record_every=1)
    counts, n, capf = simulate_histogram(model, spec, edges)
    sources["histogram"] = dens.histogram_from_counts(counts, edges, n)
    ref = sources.get("closed-form", sources["fpe"])
    for name, g in sources.items():
        try:
            fit = dens.tail_fit(g, win, p.r0)
            entry = {"tail_fit": fit.to_dict(), "norm_check": g.norm_check}
        except dens.DensityError as exc:
            # a short histogram may not reach the window; report, do not abort
            fit = None
            entry = {"tail_fit": {"error": str(exc)}, "norm_check": g.norm_check}
        if name == "fpe" and "closed-form" in sources:
            sel = (grid >= win[0]) & (grid <= win[1])
            rel = np.abs(g.q_values[sel] / ref.q_values[sel] - 1.0)
            entry["max_rel_err_vs_closed_form"] = float(rel.max())
            if check and rel.max() > 1e-3:
                failures.append(f"fpe vs closed form {rel.max():.3g} > 1e-3")
        if name == "histogram":
            entry["l1_vs_reference"] = dens.l1_distance(g, ref)
            entry["n_samples"] = int(n)
            entry["cap_fraction"] = float(capf)
            if check and entry["l1_vs_reference"] > 0.02:
                failures.append(f"histogram L1 {entry['l1_vs_reference']:.3g} > 0.02")
        if check and fit is None:
            failures.append(f"{name} tail fit failed: {entry['tail_fit']['error']}")
        elif check and abs(fit.exponent + 4.0) > 0.15:
            failures.append(f"{name} exponent {fit.exponent:.3f} outside -4 +/- 0.15")
        summary[name] = entry
        files[f"density_{name}.csv"] = g.to_csv()
    if "closed-form" in sources:
        summary["C0"] = sources["closed-form"].meta["C0"]
    return summary, files, failures


# -- tails ------------------------------------------------------------------

def _x_nodes(cfg, r0, dt):
    t = cfg.tails
    n = int(round(t.per_decade * math.log10(t.y_hi / t.y_lo))) + 1
    return math.sqrt(r0 * dt) * np.logspace(math.log10(t.y_lo), math.log10(t.y_hi), n)


def _curves(cfg, model, q, dt, c0, sources, seed_tag):
    p = model.params
    x = _x_nodes(cfg, p.r0, dt)
    out = {}
    if "quadrature" in sources:
        out["quadrature"] = tails.tail_quadrature(q, dt, x, cfg.tails.rtol)
    if "asymptotic" in sources and c0 is not None:
        out["asymptotic"] = tails.asymptotic_tail(c0, p.r0, dt, x)
    if "mc-approx" in sources and cfg.tails.mc_samples > 0:
        out["mc-approx"] = tails.mc_approx_tail(q, dt, x, cfg.tails.mc_samples,
                                                (cfg.seed, seed_tag))
    if "mc-exact" in sources and cfg.tails.mc_samples > 0:
        m = max(1, int(round(dt / (1.0 / cfg.minutes_per_year))))
        spec = build_spec(cfg, model, dt_sim=dt / m)
        sig0 = dens.inverse_cdf_sampler(q, cfg.tails.mc_samples, (cfg.seed, seed_tag, 2))
        X = sample_returns_exact(model, dt, cfg.tails.mc_samples, spec, sig0)
        out["mc-exact"] = tails.tail_from_samples(X, x, dt, source="mc-exact")
    return out


MC_Y_FLOOR = 5.0


def _fit_curve(curve, r0):
    """Log-log OLS for model curves; binned MLE (plus OLS) for sample curves."""
    try:
        if curve.counts is None:
            win = tails.audited_window(curve, r0=r0)
            return tails.tail_exponent(curve, win).to_dict()
        win = tails.audited_window(curve, r0=r0, y_floor=MC_Y_FLOOR)
        out = tails.tail_exponent_mle(curve, win).to_dict()
        try:
            out["ols"] = tails.tail_exponent(curve, win).to_dict()
        except ValueError as exc:
            out["ols"] = {"error": str(exc)}
        return out
    except (tails.TailError, ValueError) as exc:
        return {"error": str(exc)}


def run_tails(cfg: ExperimentConfig, check: bool = False):
    model = build_model(cfg)
    p = model.params
    q = dens.stationary_density(model, dens.log_grid(p.r0, cfg.density.lo, cfg.density.hi,
                                                     cfg.density.n_nodes))
    c0 = q.meta.get("C0")
    files, summary, failures = {}, {"C0": c0, "curves": []}, []
    for i, dtm in enumerate(cfg.tails.dt_minutes):
        dt = cfg.minutes_to_years(dtm)
        curves = _curves(cfg, model, q, dt, c0, cfg.tails.sources, i)
        files[f"tails_dt{_fmt_dt(dtm)}.csv"] = "".join(
            c.to_csv() if j == 0 else c.to_csv().split("\n", 1)[1]
            for j, c in enumerate(curves.values()))
        for src, c in curves.items():
            fit = _fit_curve(c, p.r0)
            summary["curves"].append({"dt_minutes": dtm, "source": src, "fit": fit})
            if check and src in ("quadrature", "mc-approx", "mc-exact"):
                tol = 0.10 if src == "quadrature" else 0.15
                if "estimate" not in fit or abs(fit["estimate"] + 3.0) > tol:
                    failures.append(f"{src} dt={dtm:g}: exponent {fit.get('estimate')} "
                                    f"outside -3 +/- {tol}")
    return summary, files, failures


# -- scaling ----------------------------------------------------------------

def run_scaling(cfg: ExperimentConfig, check: bool = False):
    model = build_model(cfg)
    p = model.params
    q = dens.stationary_density(model, dens.log_grid(p.r0, cfg.density.lo, cfg.density.hi,
                                                     cfg.density.n_nodes))
    dts_m = list(cfg.tails.dt_minutes)
    dt_max = cfg.minutes_to_years(max(dts_m))
    x_ref = cfg.tails.x_ref_y * math.sqrt(p.r0 * dt_max)
    # a small node set around x_ref keeps the experiment cheap
    x = x_ref * np.array([0.8, 0.9, 1.0, 1.1, 1.25])
    by_src: dict = {}
    for i, dtm in enumerate(dts_m):
        dt = cfg.minutes_to_years(dtm)
        if "quadrature" in cfg.tails.sources:
            by_src.setdefault("quadrature", []).append(
                tails.tail_quadrature(q, dt, x, cfg.tails.rtol))
        if "asymptotic" in cfg.tails.sources and q.meta.get("C0"):
            by_src.setdefault("asymptotic", []).append(
                tails.asymptotic_tail(q.meta["C0"], p.r0, dt, x))
        if "mc-approx" in cfg.tails.sources and cfg.tails.mc_samples > 0:
            # common random numbers across dt
            by_src.setdefault("mc-approx", []).append(
                tails.mc_approx_tail(q, dt, x, cfg.tails.mc_samples, (cfg.seed, 0)))
    summary = {"x_ref": x_ref, "dt_minutes": dts_m, "minutes_per_year": cfg.minutes_per_year,
               "reports": {}}
    rows, failures = [], []
    for src, curves in by_src.items():
        rep = tails.scaling_report(curves, x_ref)
        rep["dt_minutes"] = dts_m
        summary["reports"][src] = rep
        for dtm, c in zip(dts_m, curves):
            rows.append([src, dtm, c.dt, c.at(x_ref)])
        tol = {"quadrature": 0.05, "mc-approx": 0.1}.get(src)
        if check and tol is not None and abs(rep["exponent"] - 1.5) > tol:
            failures.append(f"{src} scaling exponent {rep['exponent']:.4f} outside 1.5 +/- {tol}")
    if "quadrature" in summary["reports"]:
        summary["exponent"] = summary["reports"]["quadrature"]["exponent"]
    files = {"scaling.csv": _csv(["source", "dt_minutes", "dt", "pbar_at_x_ref"], rows)}
    return summary, files, failures


# -- ingest -----------------------------------------------------------------

def run_ingest(cfg: ExperimentConfig, check: bool = False, base_dir: Path | None = None):
    ic = cfg.ingest
    if ic.csv is None:
        raise ConfigError("ingest.csv is not set")
    path = Path(ic.csv)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    if not path.is_file():
        raise ConfigError(f"ingest.csv not found: {path}")
    series = ing.read_prices(path)
    results = ing.ingest(series, ic.dt_minutes, cfg.minutes_per_year, ic.subtract_mean,
                         ic.overlapping, ic.max_gap_minutes, ic.min_returns, ic.per_decade)
    files, failures = {}, []
    summary = {"n_observations": int(series.t_us.size), "overlapping": ic.overlapping,
               "subtract_mean": ic.subtract_mean, "results": [r.summary() for r in results]}
    for r in results:
        if r.curve is not None:
            files[f"ingest_dt{_fmt_dt(r.dt_minutes)}.csv"] = r.curve.to_csv()
        elif check:
            failures.append(f"dt={r.dt_minutes:g}: fit skipped")
    return summary, files, failures


def synthetic_segments(model: VolModel, dt_minutes: float, n_segments: int, minutes_per_year: float,
                       seed: int = 0, steps_per_dt: int = 5, gap_days: float = 1.0):
    """Model prices for an ingest self-test, as (t_us, prices).

    Hill standard errors assume independent returns, but a single path keeps
    sigma nearly fixed for years. So each segment is one dt long, starts from
    a stationary sigma draw and is followed by a multi-day gap that the
    resampler drops.
    """
    from .density import inverse_cdf_sampler

    q = dens.stationary_density(model)
    dt_sim = dt_minutes / steps_per_dt / minutes_per_year
    spec = SimSpec.default(model, n_paths=n_segments, n_steps=steps_per_dt, dt_sim=dt_sim,
                           burn_in_steps=0, record_every=1, seed=seed)
    sig0 = inverse_cdf_sampler(q, n_segments, (seed, 2))
    ens = simulate_joint(model, spec, sigma_init=sig0)
    step_us = int(round(dt_minutes / steps_per_dt * 60e6))
    period = int(gap_days * 86400e6) + steps_per_dt * step_us
    t = (np.arange(n_segments, dtype=np.int64)[:, None] * period
         + np.arange(steps_per_dt + 1, dtype=np.int64)[None, :] * step_us)
    return t.ravel(), ens.s_paths.ravel()


COMMANDS = {"validate": run_validate, "simulate": run_simulate, "density": run_density,
            "tails": run_tails, "scaling": run_scaling, "ingest": run_ingest}
