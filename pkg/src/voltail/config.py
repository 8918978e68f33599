"""Experiment configuration: dataclasses backed by a JSON schema.

Unknown keys are rejected by the schema before any dataclass is built.
Optional numeric fields set to null fall back to model-scaled defaults
(see :meth:`voltail.sim.SimSpec.default`).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from typing import Optional

import jsonschema

MINUTES_PER_YEAR = {"trading": 252 * 6.5 * 60, "calendar": 365 * 24 * 60}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    A: float = 1.0
    B: float = 1.0
    k: float = 1.0
    r0: float = 0.04
    rho: float = 0.0
    mu: float = 0.0
    # optional custom shape functions as expressions in x = r0 / sigma^2
    f: Optional[str] = None
    g: Optional[str] = None


@dataclass(frozen=True)
class SimConfig:
    n_paths: int = 4
    n_steps: int = 100_000
    dt_sim: Optional[float] = None
    burn_in_steps: Optional[int] = None
    sigma0: Optional[float] = None
    s0: float = 100.0
    scheme: str = "reciprocal-euler"
    sigma_floor: Optional[float] = None
    sigma_cap: Optional[float] = None
    record_every: int = 100
    n_workers: int = 1
    joint: bool = False


@dataclass(frozen=True)
class DensityConfig:
    n_nodes: int = 2048
    lo: float = 1e-3
    hi: float = 1e3
    hist_paths: int = 64
    hist_steps: int = 1_000_000
    per_decade: int = 20
    window: tuple = (100.0, 1e4)


@dataclass(frozen=True)
class TailsConfig:
    dt_minutes: tuple = (5.0, 10.0, 30.0, 60.0, 120.0)
    # x nodes are y * sqrt(r0 dt) with y log-spaced on [y_lo, y_hi]
    y_lo: float = 0.1
    y_hi: float = 1000.0
    per_decade: int = 20
    mc_samples: int = 10_000_000
    rtol: float = 1e-8
    # scaling reference point, in units of sqrt(r0 * max(dt))
    x_ref_y: float = 10.0
    sources: tuple = ("quadrature", "asymptotic", "mc-approx")


@dataclass(frozen=True)
class IngestConfig:
    csv: Optional[str] = None
    dt_minutes: tuple = (5.0, 10.0, 30.0, 60.0, 120.0)
    subtract_mean: bool = False
    overlapping: bool = False
    # returns whose span holds an observation gap longer than this are dropped;
    # null means one dt
    max_gap_minutes: Optional[float] = None
    min_returns: int = 1000
    per_decade: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    tails: TailsConfig = field(default_factory=TailsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    time_convention: str = "trading"
    seed: int = 12345
    out: str = "out"

    @property
    def minutes_per_year(self) -> float:
        return MINUTES_PER_YEAR[self.time_convention]

    def minutes_to_years(self, minutes: float) -> float:
        return minutes / self.minutes_per_year

    def to_dict(self) -> dict:
        d = asdict(self)
        for sec in d.values():
            if isinstance(sec, dict):
                for k, v in sec.items():
                    if isinstance(v, tuple):
                        sec[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def replace(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(kw)
        return from_dict(d)


SECTIONS = {"model": ModelConfig, "sim": SimConfig, "density": DensityConfig,
            "tails": TailsConfig, "ingest": IngestConfig}


def schema() -> dict:
    text = resources.files("voltail").joinpath("config.schema.json").read_text()
    return json.loads(text)


def validate(d: dict) -> None:
    try:
        jsonschema.validate(d, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


def _section(cls, d: dict):
    kw = {}
    for f in fields(cls):
        if f.name in d:
            v = d[f.name]
            kw[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kw)


def from_dict(d: dict) -> ExperimentConfig:
    validate(d)
    kw = {name: _section(cls, d.get(name, {})) for name, cls in SECTIONS.items()}
    for key in ("time_convention", "seed", "out"):
        if key in d:
            kw[key] = d[key]
    return ExperimentConfig(**kw)


def loads(text: str) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return from_dict(d)


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return loads(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
