"""Experiment configuration: a JSON document merged with command-line overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..distributions import (MdpDistribution, gen_exponential_tail, gen_proposition1_instance,
                             gen_random_tabular, gen_theorem3_instance, tail_truncation_size)
from ..mdp import NoiseModel, bandit_mdp
from ..rng import child_stream, mix64

EXPERIMENTS = ("pce", "omerm", "bandit-ucb", "bandit-ratio", "validate")
MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


@dataclass
class ExperimentConfig:
    experiment: str
    instance: dict = field(default_factory=dict)
    K: int | None = None
    T: int | None = None
    T_grid: list | None = None
    arms: list | None = None
    num_test_draws: int = 0
    seeds: list | None = None
    master_seed: int = 0
    num_seeds: int = 1
    white_box: bool = True
    c_o: float = 1.0
    n_cap: int | None = None
    c1: float = 1.0
    c2: float = 1.0
    mode: str = "coordinate"
    epsilon: float | None = None
    delta: float | None = None
    iterations: int | None = None
    num_tasks: int | None = None
    eval_episodes: int | None = None
    out: str = "runs/out"
    base_dir: str = "."
    overrides: dict = field(default_factory=dict)

    def run_seeds(self) -> list[int]:
        """Explicit seed list, or ``num_seeds`` seeds mixed from the master seed."""
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [mix64(self.master_seed, i) & MASK64 for i in range(self.num_seeds)]

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        for name in ("K", "T", "num_test_draws", "num_seeds", "n_cap", "iterations", "num_tasks",
                     "eval_episodes", "master_seed"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or isinstance(v, bool) or v < 0):
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        for name in ("c_o", "c1", "c2"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("epsilon", "delta"):
            v = getattr(self, name)
            if v is not None and not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.mode not in ("exhaustive", "coordinate"):
            raise ConfigError(f"mode must be exhaustive or coordinate, got {self.mode!r}")
        if self.seeds is not None and any(not isinstance(s, int) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative integers")
        if self.T_grid is not None and (any(not isinstance(t, int) or t < 1 for t in self.T_grid)
                                        or list(self.T_grid) != sorted(self.T_grid)):
            raise ConfigError("T_grid must be ascending positive integers")
        needs = {"pce": ("K",), "omerm": ("epsilon",), "bandit-ratio": ("T_grid",)}
        for name in needs.get(self.experiment, ()):
            if getattr(self, name) is None:
                raise ConfigError(f"experiment {self.experiment} needs {name}")
        if self.experiment == "bandit-ucb" and self.T is None and not self.T_grid:
            raise ConfigError("experiment bandit-ucb needs T or T_grid")
        if self.experiment == "pce" and self.K < 1:
            raise ConfigError("K must be at least 1")
        if self.experiment == "bandit-ucb" and self.instance == {} and not self.arms:
            raise ConfigError("bandit-ucb needs an instance or an arms list")
        if self.experiment != "bandit-ucb" or self.instance:
            _check_instance(self.instance, Path(self.base_dir))
            if self.experiment != "validate":
                try:
                    build_instance(self)
                except (ValueError, KeyError, TypeError) as e:
                    raise ConfigError(f"cannot build instance: {type(e).__name__}: {e}") from None
        return self


def _check_instance(inst: dict, base: Path) -> None:
    if not isinstance(inst, dict) or not inst:
        raise ConfigError("instance must be an object with either 'file' or 'generator'")
    if "file" in inst:
        path = base / inst["file"]
        if not path.is_file():
            raise ConfigError(f"instance file not found: {path}")
    elif inst.get("generator") not in GENERATORS:
        raise ConfigError(f"unknown generator {inst.get('generator')!r}; expected one of {sorted(GENERATORS)}")


def _noise(doc) -> NoiseModel | None:
    if doc is None:
        return None
    if isinstance(doc, str):
        return NoiseModel(doc)
    return NoiseModel(doc["kind"], float(doc.get("sigma", 1.0)))


def _gen_prop1(p):
    return gen_proposition1_instance(int(p["M"]), p.get("probs"), _noise(p.get("noise")))


def _gen_thm3(p):
    return gen_theorem3_instance(int(p["M"]), float(p["delta_gap"]))


def _gen_random(p):
    rng = child_stream(int(p.get("seed", 0)), 0xD15)
    return gen_random_tabular(int(p["S"]), int(p["A"]), int(p["H"]), int(p["num_mdps"]), rng,
                              _noise(p.get("noise")))


def _gen_exp_tail(p):
    lam = float(p["lam"])
    size = int(p.get("size", tail_truncation_size(lam)))
    family = [bandit_mdp(np.eye(size)[i], _noise(p.get("noise")) or NoiseModel.bernoulli()) for i in range(size)]
    return gen_exponential_tail(family, lam)


def _gen_bandits(p):
    noise = NoiseModel.gaussian(1.0)
    support = tuple(bandit_mdp(np.asarray(m, dtype=float), noise) for m in p["means"])
    probs = p.get("probs")
    return MdpDistribution.uniform(support) if probs is None else MdpDistribution(support, probs)


GENERATORS = {
    "proposition1": _gen_prop1,
    "theorem3": _gen_thm3,
    "random_tabular": _gen_random,
    "exponential_tail": _gen_exp_tail,
    "bandits": _gen_bandits,
}


def build_instance(cfg: ExperimentConfig) -> MdpDistribution:
    """The distribution named by the config; a single-MDP file becomes a point mass."""
    from ..serialization import distribution_from_dict, load_json, mdp_from_dict

    inst = cfg.instance
    if "file" in inst:
        path = Path(cfg.base_dir) / inst["file"]
        doc = load_json(path)
        if "mdps" in doc:
            return distribution_from_dict(doc, path.parent)
        return MdpDistribution((mdp_from_dict(doc),), [1.0])
    return GENERATORS[inst["generator"]](inst.get("params", {}))


def parse_value(text: str):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def load_config(experiment: str, path: str | Path | None, *, seed: int | None = None, out: str | None = None,
                overrides: list[str] | None = None) -> ExperimentConfig:
    """Read the config file, then apply ``--seed``, ``--out`` and ``key=value`` overrides in that order."""
    doc: dict = {}
    base = "."
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        base = str(p.parent)
    doc = copy.deepcopy(doc)
    if doc.get("experiment", experiment) != experiment:
        raise ConfigError(f"config names experiment {doc['experiment']!r} but {experiment!r} was requested")
    doc["experiment"] = experiment
    doc.setdefault("base_dir", base)
    recorded = dict(doc.pop("overrides", {}) or {})
    if seed is not None:
        doc["master_seed"] = seed
        doc["seeds"] = None
        recorded["--seed"] = seed
    if out is not None:
        doc["out"] = out
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        apply_override(doc, key.strip(), parse_value(raw))
        recorded[key.strip()] = raw
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config fields: {unknown}")
    try:
        cfg = ExperimentConfig(**doc, overrides=recorded)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg.validate()


@dataclass
class RunMetadata:
    config: dict
    version: str = __version__
    seeds: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    deviations: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)
