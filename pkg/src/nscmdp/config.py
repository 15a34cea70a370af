"""Experiment configuration: a YAML mapping validated into plain dataclasses."""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .instances import FIXTURES, Instance, load_fixture, load_instance, parse_instance

ALGORITHMS = ("ns_sops", "lag_ftrl", "uniform", "oracle_policy")
KINDS = ("stationary", "alternating", "budgeted", "fully_adversarial")


class ConfigError(ValueError):
    pass


@dataclass
class AlgorithmSpec:
    name: str
    label: str
    params: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    instance: dict               # exactly one of fixture / file / inline
    T: int
    delta: float
    adversary_kind: str
    adversary_params: dict
    algorithms: list
    seeds: list
    out: str = "results"
    thin: int = 1
    threads: int = 1
    levels: list = field(default_factory=list)
    timing: bool = False
    base_dir: Path = Path(".")
    digest: str = ""

    def load_instance(self) -> Instance:
        spec = self.instance
        if "fixture" in spec:
            return load_fixture(spec["fixture"])
        if "file" in spec:
            return load_instance(self.resolve(spec["file"]))
        return parse_instance(spec["inline"], "<inline instance>")

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def corruption_levels(self) -> list[float]:
        return [parse_level(v, self.T) for v in self.levels]


_LEVEL = re.compile(r"^\s*(sqrt\(T\)|T)\s*(?:/\s*([0-9.]+))?\s*$")


def parse_level(value, T: int) -> float:
    """Numbers pass through; strings may be ``T``, ``sqrt(T)``, optionally divided by a constant."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        v = float(value)
    else:
        m = _LEVEL.match(str(value))
        if not m:
            raise ConfigError(f"cannot parse corruption level {value!r}")
        v = math.sqrt(T) if m.group(1) == "sqrt(T)" else float(T)
        if m.group(2):
            v /= float(m.group(2))
    if not math.isfinite(v) or v < 0:
        raise ConfigError(f"corruption level {value!r} must be a nonnegative number")
    return v


def _seed_list(raw) -> list[int]:
    if isinstance(raw, bool):
        raise ConfigError("seeds must be a count or a list of integers")
    if isinstance(raw, int):
        if raw < 1:
            raise ConfigError("seed count must be positive")
        return list(range(raw))
    if isinstance(raw, list) and raw and all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in raw):
        if len(set(raw)) != len(raw):
            raise ConfigError("seed list contains duplicates")
        return list(raw)
    raise ConfigError("seeds must be a positive count or a non-empty list of nonnegative integers")


def _algorithm(entry, i) -> AlgorithmSpec:
    if isinstance(entry, str):
        entry = {"name": entry}
    if not isinstance(entry, dict) or "name" not in entry:
        raise ConfigError(f"algorithms[{i}] must be a name or a mapping with 'name'")
    entry = dict(entry)
    name = entry.pop("name")
    if name not in ALGORITHMS:
        raise ConfigError(f"algorithms[{i}]: unknown algorithm {name!r}; choose from {ALGORITHMS}")
    label = str(entry.pop("label", ""))
    if name == "ns_sops":
        c = entry.setdefault("c_hat", "known")
        if c != "known" and not (isinstance(c, (int, float)) and not isinstance(c, bool) and c >= 0):
            raise ConfigError(f"algorithms[{i}]: c_hat must be 'known' or a nonnegative number")
        entry.setdefault("doubling", False)
        label = label or "ns_sops"
    elif name == "lag_ftrl":
        if entry.setdefault("variant", "stabilized") not in ("plain", "stabilized"):
            raise ConfigError(f"algorithms[{i}]: variant must be 'plain' or 'stabilized'")
        s = entry.setdefault("beta_scale", 1.0)
        if not isinstance(s, (int, float)) or s <= 0:
            raise ConfigError(f"algorithms[{i}]: beta_scale must be positive")
        r = entry.setdefault("rho", "oracle")
        if r != "oracle" and not (isinstance(r, (int, float)) and r > 0):
            raise ConfigError(f"algorithms[{i}]: rho must be 'oracle' or a positive number")
        label = label or f"lag_ftrl_{entry['variant']}"
    else:
        label = label or name
    allowed = {"ns_sops": {"c_hat", "doubling"}, "lag_ftrl": {"variant", "beta_scale", "rho"}}.get(name, set())
    extra = set(entry) - allowed
    if extra:
        raise ConfigError(f"algorithms[{i}]: unexpected keys {sorted(extra)} for {name}")
    return AlgorithmSpec(name, label, entry)


def config_from_dict(raw: dict, base_dir=".", digest: str = "") -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    known = {"instance", "T", "delta", "adversary", "algorithms", "seeds", "out", "thin", "threads", "levels", "timing"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown top-level keys {sorted(extra)}")
    for key in ("instance", "T", "algorithms"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")

    inst = raw["instance"]
    if isinstance(inst, str):
        inst = {"fixture": inst} if inst in FIXTURES else {"file": inst}
    if not isinstance(inst, dict) or len(set(inst) & {"fixture", "file", "inline"}) != 1 or len(inst) != 1:
        raise ConfigError("instance must be a fixture name, a file path, or one of {fixture, file, inline}")
    if "fixture" in inst and inst["fixture"] not in FIXTURES:
        raise ConfigError(f"unknown fixture {inst['fixture']!r}; available: {FIXTURES}")

    T = raw["T"]
    if isinstance(T, bool) or not isinstance(T, int) or T < 2:
        raise ConfigError("T must be an integer >= 2")
    delta = raw.get("delta", 0.05)
    if not isinstance(delta, (int, float)) or not 0 < delta < 1:
        raise ConfigError("delta must lie in (0, 1)")

    adv = raw.get("adversary", {"kind": "stationary"})
    if isinstance(adv, str):
        adv = {"kind": adv}
    if not isinstance(adv, dict) or adv.get("kind") not in KINDS:
        raise ConfigError(f"adversary.kind must be one of {KINDS}")
    params = adv.get("params", {}) or {}
    if not isinstance(params, dict) or set(adv) - {"kind", "params"}:
        raise ConfigError("adversary must have 'kind' and an optional 'params' mapping")

    algs = raw["algorithms"]
    if not isinstance(algs, list) or not algs:
        raise ConfigError("algorithms must be a non-empty list")
    specs = [_algorithm(a, i) for i, a in enumerate(algs)]
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"algorithm labels must be unique, got {labels}")

    thin = raw.get("thin", 1)
    threads = raw.get("threads", 1)
    for key, v in (("thin", thin), ("threads", threads)):
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ConfigError(f"{key} must be a positive integer")
    timing = raw.get("timing", False)
    if not isinstance(timing, bool):
        raise ConfigError("timing must be true or false")
    levels = raw.get("levels", [])
    if not isinstance(levels, list):
        raise ConfigError("levels must be a list")

    cfg = ExperimentConfig(inst, T, float(delta), adv["kind"], dict(params), specs,
                           _seed_list(raw.get("seeds", 1)), str(raw.get("out", "results")),
                           thin, threads, list(levels), timing, Path(base_dir), digest)
    cfg.corruption_levels()
    if "file" in inst and not cfg.resolve(inst["file"]).is_file():
        raise ConfigError(f"instance file {cfg.resolve(inst['file'])} does not exist")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_dict(raw, path.parent, hashlib.sha256(data).hexdigest())
