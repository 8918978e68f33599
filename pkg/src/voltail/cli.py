"""Command-line entry point.

    voltail <command> --config FILE [--seed N] [--out DIR] [--check]

FILE may be an experiment config or a manifest written by an earlier run;
a manifest replays its stored config (seed and output directory included
unless overridden). Exit codes: 0 ok, 2 config error, 3 numerical or model
failure, 4 check failure (``--check`` only; ``validate`` always checks).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .experiments import COMMANDS

log = logging.getLogger("voltail")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


def atomic_write(path: Path, data) -> None:
    """Write to a temp file in the target directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        mask = os.umask(0)
        os.umask(mask)
        os.chmod(tmp, 0o666 & ~mask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba", "sympy", "jsonschema"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    try:
        out["voltail"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["voltail"] = None
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def load_config(path: str) -> tuple[cfgmod.ExperimentConfig, str | None]:
    """Config (and the recorded command, when FILE is a manifest)."""
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if isinstance(d, dict) and d.get("kind") == "voltail-manifest":
        return cfgmod.from_dict(d["config"]), d.get("command")
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return cfgmod.from_dict(d), None


def run(command: str, cfg: cfgmod.ExperimentConfig, out_dir: Path, check: bool = False,
        base_dir: Path | None = None) -> tuple[int, dict]:
    fn = COMMANDS[command]
    kw = {"base_dir": base_dir} if command == "ingest" else {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        summary, files, failures = fn(cfg, check=check, **kw)
    summary = _jsonable(summary)
    summary["warnings"] = [str(w.message) for w in caught]
    for w in caught:
        log.warning("%s", w.message)
    digests = {}
    for name, data in sorted(files.items()):
        atomic_write(out_dir / name, data)
        raw = data.encode() if isinstance(data, str) else data
        digests[name] = hashlib.sha256(raw).hexdigest()
    summary["check_failures"] = failures
    atomic_write(out_dir / f"{command}.json", json.dumps(summary, indent=2, sort_keys=True))
    manifest = {
        "kind": "voltail-manifest",
        "command": command,
        "config": cfg.to_dict(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "time_convention": cfg.time_convention,
        "minutes_per_year": dict(cfgmod.MINUTES_PER_YEAR),
        "versions": _versions(),
        "outputs": digests,
    }
    atomic_write(out_dir / f"{command}.manifest.json", json.dumps(manifest, indent=2,
                                                                   sort_keys=True))
    enforce = check or command == "validate"
    code = EXIT_CHECK if (enforce and failures) else EXIT_OK
    return code, summary


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voltail", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="experiment config or manifest JSON")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--check", action="store_true", help="enforce acceptance tolerances")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, recorded = load_config(args.config)
        if recorded is not None and recorded != args.command:
            raise ConfigError(f"manifest was written by '{recorded}', not '{args.command}'")
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.out is not None:
            over["out"] = args.out
        if over:
            cfg = cfg.replace(**over)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base = Path(args.config).resolve().parent
    out_dir = Path(cfg.out)
    if not out_dir.is_absolute():
        out_dir = Path.cwd() / out_dir
    try:
        code, summary = run(args.command, cfg, out_dir, args.check, base)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, ArithmeticError, FileNotFoundError) as exc:
        mod = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"{args.command} failed [{mod}.{type(exc).__name__}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for f in summary["check_failures"]:
        print(f"check failed: {f}", file=sys.stderr)
    print(json.dumps({"command": args.command, "out": str(out_dir), "exit": code}))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
