"""Experiment configuration: schema, canonical form, and hashing.

Config files are JSON or TOML.  Top-level schema (all defaults documented):

    schema_version   int, currently 1 (required)
    seed             int (required; there is no wall-clock seeding)
    benchmark        name of a shipped benchmark, or
    model            inline model dict (ModelSpec.to_json schema)
    sim              {n_particles=4096, dt=0.01, replicas=16, threads=1}
    params           operation-specific parameters (see the CLI help)
    out_dir          output directory (default "out", env MFERGO_OUT_DIR wins)

Canonicalization fills defaults and sorts keys; the config hash is the sha256
of the canonical JSON, so identical configs land on identical ledger rows.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .benchmarks import get_benchmark
from .errors import ConfigError
from .model import ModelSpec
from .particle import SimConfig

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema_version", "seed", "benchmark", "model", "sim", "params",
             "out_dir"}
_SIM_DEFAULTS = {"n_particles": 4096, "dt": 0.01, "replicas": 16, "threads": 1}


def load_config_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_bytes()
    if p.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {p} is not valid JSON: {e}") from e


def canonicalize(raw: dict) -> dict:
    """Validate, fill defaults, and return a key-sorted copy."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    if "seed" not in raw:
        raise ConfigError("config key 'seed' is required")
    if not isinstance(raw["seed"], int):
        raise ConfigError("config key 'seed' must be an integer")
    has_bench = "benchmark" in raw
    has_model = "model" in raw
    if has_bench == has_model:
        raise ConfigError("config needs exactly one of 'benchmark' or 'model'")

    sim = dict(_SIM_DEFAULTS)
    extra = set(raw.get("sim", {})) - set(_SIM_DEFAULTS)
    if extra:
        raise ConfigError(f"unknown sim keys: {sorted(extra)}")
    sim.update(raw.get("sim", {}))

    out = {
        "schema_version": SCHEMA_VERSION,
        "seed": int(raw["seed"]),
        "sim": sim,
        "params": raw.get("params", {}),
        "out_dir": raw.get("out_dir", "out"),
    }
    if has_bench:
        out["benchmark"] = raw["benchmark"]
    else:
        out["model"] = raw["model"]

    def sort_keys(obj):
        if isinstance(obj, dict):
            return {k: sort_keys(obj[k]) for k in sorted(obj)}
        if isinstance(obj, list):
            return [sort_keys(v) for v in obj]
        return obj

    return sort_keys(out)


def config_hash(canonical: dict) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class ExperimentConfig:
    raw: dict
    canonical: dict
    model: ModelSpec
    sim: SimConfig
    seed: int
    params: dict
    out_dir: Path
    benchmark: str = ""

    @property
    def hash(self) -> str:
        return config_hash(self.canonical)


def parse_config(raw: dict, seed_override: Optional[int] = None,
                 threads_override: Optional[int] = None,
                 out_dir_override: Optional[str] = None) -> ExperimentConfig:
    canonical = canonicalize(raw)
    if seed_override is not None:
        canonical["seed"] = int(seed_override)
    if threads_override is not None:
        canonical["sim"]["threads"] = int(threads_override)
    env_out = os.environ.get("MFERGO_OUT_DIR")
    env_threads = os.environ.get("MFERGO_THREADS")
    if env_threads and threads_override is None:
        canonical["sim"]["threads"] = int(env_threads)
    out_dir = out_dir_override or env_out or canonical["out_dir"]

    if "benchmark" in canonical:
        model = get_benchmark(canonical["benchmark"])
        bench = canonical["benchmark"]
    else:
        try:
            model = ModelSpec.from_json(canonical["model"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad inline model: {e}") from e
        bench = canonical["model"].get("name", "inline")
    s = canonical["sim"]
    sim = SimConfig(n_particles=int(s["n_particles"]), dt=float(s["dt"]),
                    replicas=int(s["replicas"]), threads=int(s["threads"]))
    return ExperimentConfig(raw=raw, canonical=canonical, model=model, sim=sim,
                            seed=canonical["seed"], params=canonical["params"],
                            out_dir=Path(out_dir), benchmark=bench)
