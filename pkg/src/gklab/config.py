"""Experiment configuration: strict JSON schema with documented defaults."""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .rates import RateModel, RateModelError, model_from_spec

EXPERIMENTS = ("hydro", "hydrostatic", "rate-consistency", "ldp-scan", "idensity")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


DEFAULTS: dict[str, Any] = {
    "experiment": None,
    "model": {"preset": "constant", "kappa": 1.0},
    "gamma": {"kind": "sin-squared"},
    "N": [128, 256, 512],
    "J": 256,
    "dt": 1e-4,
    "T": 1.0,
    "frames": 100,
    "seed": 0,
    "replicas": 3,
    "K_s": 8,
    "K_t": 16,
    "out": "results",
    "engine": "thinned",
    "blocks": 4,
    "burn_in": 50.0,
    "snapshots": 200,
    "thin": 0.05,
    "stationary_seeds": 8,
    "distance_K": 16,
    "threshold": 0.6,
    "samples": 100000,
    "held_levels": [0.25],
    "regularization": 0.01,
    "levels": [[0.1, 0.1, 100], [0.05, 0.05, 400], [0.02, 0.02, 1600],
               [0.01, 0.01, 6400]],
}

_TYPES: dict[str, tuple] = {
    "J": (int,), "frames": (int,), "seed": (int,), "replicas": (int,), "K_s": (int,),
    "K_t": (int,), "blocks": (int,), "snapshots": (int,), "stationary_seeds": (int,),
    "distance_K": (int,), "samples": (int,),
    "dt": (int, float), "T": (int, float), "burn_in": (int, float), "thin": (int, float),
    "threshold": (int, float), "regularization": (int, float),
    "out": (str,), "engine": (str,), "model": (dict,), "gamma": (dict,),
    "N": (list,), "held_levels": (list,), "levels": (list,),
}

GAMMA_KINDS = {
    "constant": {"value"},
    "sin": {"mean", "amplitude"},
    "sin-squared": set(),
    "step": {"low", "high", "width"},
    "values": {"values"},
}


def gamma_function(spec: dict):
    """Callable profile ``u -> gamma(u)`` from a config entry."""
    kind = spec.get("kind")
    if kind not in GAMMA_KINDS:
        raise ConfigError(f"gamma.kind: unknown profile {kind!r}")
    extra = set(spec) - GAMMA_KINDS[kind] - {"kind"}
    if extra:
        raise ConfigError(f"gamma: unknown key {sorted(extra)[0]!r}")
    if kind == "constant":
        v = float(spec.get("value", 0.5))
        return lambda u: np.full(np.shape(u), v)
    if kind == "sin":
        a, b = float(spec.get("mean", 0.5)), float(spec.get("amplitude", 0.2))
        return lambda u: a + b * np.sin(2 * np.pi * np.asarray(u))
    if kind == "sin-squared":
        return lambda u: np.clip((1 + np.sin(2 * np.pi * np.asarray(u))) ** 2 / 4, 0, 1)
    if kind == "step":
        from .smoothing import mollified_step

        lo, hi = float(spec.get("low", 0.3)), float(spec.get("high", 0.7))
        w = float(spec.get("width", 0.05))
        return lambda u: mollified_step(np.asarray(u), lo, hi, w)
    vals = np.asarray(spec["values"], dtype=float)
    return lambda u: vals[(np.asarray(u) * vals.size).astype(int) % vals.size]


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict

    def __getattr__(self, key: str):
        try:
            return self.__dict__["data"][key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def model_obj(self) -> RateModel:
        return model_from_spec(self.data["model"])

    @property
    def gamma_fn(self):
        return gamma_function(self.data["gamma"])

    @property
    def out_dir(self) -> Path:
        return Path(self.data["out"])

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        """Digest of every setting that can change results (the output directory cannot)."""
        data = {k: v for k, v in self.data.items() if k != "out"}
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        data.update(changes)
        return validate(data)


def validate(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]!r}")
    data = copy.deepcopy(DEFAULTS)
    data.update(copy.deepcopy(raw))
    for key, types in _TYPES.items():
        val = data[key]
        if isinstance(val, bool) or not isinstance(val, types):
            raise ConfigError(f"{key}: expected {types[0].__name__}, got {type(val).__name__}")
        if types == (int, float):
            data[key] = float(val)
    exp = data["experiment"]
    if exp is not None and exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment {exp!r}")
    try:
        model_from_spec(data["model"])
    except RateModelError as exc:
        raise ConfigError(f"model: {exc}") from None
    gamma_function(data["gamma"])
    Ns = data["N"]
    if not Ns or not all(isinstance(n, int) and not isinstance(n, bool) and n >= 2 for n in Ns):
        raise ConfigError("N: expected a non-empty list of integers >= 2")
    if Ns != sorted(Ns) or len(set(Ns)) != len(Ns):
        raise ConfigError("N: list must be strictly ascending")
    for key in ("J", "frames", "replicas", "K_t", "blocks", "snapshots", "distance_K", "samples"):
        if data[key] < 1:
            raise ConfigError(f"{key}: must be >= 1")
    if data["K_s"] < 0:
        raise ConfigError("K_s: must be >= 0")
    for key in ("dt", "thin", "burn_in", "regularization"):
        if data[key] <= 0:
            raise ConfigError(f"{key}: must be > 0")
    if data["T"] < 0:
        raise ConfigError("T: must be >= 0")
    if data["engine"] not in ("thinned", "tree"):
        raise ConfigError("engine: must be 'thinned' or 'tree'")
    out = Path(data["out"])
    probe = out if out.exists() else out.parent if str(out.parent) else Path(".")
    while not probe.exists():
        probe = probe.parent
    if not os.access(probe, os.W_OK):
        raise ConfigError(f"out: directory {str(out)!r} is not writable")
    return ExperimentConfig(data)


def load_config(path: str | os.PathLike | None = None, **overrides) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {str(p)!r} does not exist")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return validate(raw)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("GKLAB_WORKERS", "1")))
    except ValueError:
        raise ConfigError("GKLAB_WORKERS must be an integer") from None
