"""Experiment configuration files and run manifests.

Configs are INI files with sections, or the equivalent nested JSON object:

    [run]
    seed = 7

    [dataset]
    generator = gaussian_blobs
    n = 200
    feature_dim = 16

    [network]
    widths = 8,4,2

    [train]
    iterations = 50
    schedule = inverse_square
    C = 0.04

Missing keys take the defaults in ``DEFAULTS``.
"""
from __future__ import annotations

import configparser
import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .net import LossEvaluator, init_network
from .optim import NoisySGDConfig, Schedule
from .experiments.data import DatasetSpec


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "run": {"seed": None},
    "dataset": {"generator": "gaussian_blobs", "n": 200, "feature_dim": 16,
                "num_classes": 2, "noise_level": 0.3},
    "network": {"widths": [8, 4, 2], "activation": "tanh", "bias": True,
                "architecture": "halving", "init_seed": 0},
    "train": {"batch_size": 16, "iterations": 50, "schedule": "inverse_square", "C": 0.04,
              "noise": None, "noise_enabled": True, "loss": "clipped_cross_entropy",
              "loss_high": 4.0, "eval_loss": "zero_one"},
    "experiment": {"replications": 20, "n_test": 1000, "bins": 8, "L_values": [0, 1, 2, 3],
                   "tolerance": 0.02},
}

_TYPES = {
    ("run", "seed"): int,
    ("dataset", "n"): int, ("dataset", "feature_dim"): int, ("dataset", "num_classes"): int,
    ("dataset", "noise_level"): float,
    ("network", "widths"): "intlist", ("network", "bias"): bool, ("network", "init_seed"): int,
    ("train", "batch_size"): int, ("train", "iterations"): int, ("train", "C"): float,
    ("train", "noise"): float, ("train", "noise_enabled"): bool, ("train", "loss_high"): float,
    ("experiment", "replications"): int, ("experiment", "n_test"): int,
    ("experiment", "bins"): int, ("experiment", "L_values"): "intlist",
    ("experiment", "tolerance"): float,
}


def _coerce(section: str, key: str, value):
    kind = _TYPES.get((section, key))
    if value is None or kind is None:
        return value
    try:
        if kind == "intlist":
            if isinstance(value, str):
                return [int(v) for v in value.replace(" ", "").split(",") if v]
            return [int(v) for v in value]
        if kind is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes", "on"):
                    return True
                if value.lower() in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {key} = {value!r} is not a valid {getattr(kind, '__name__', kind)}") from exc


def parse_config_text(text: str, fmt: str) -> dict:
    if fmt == "json":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
    else:
        cp = configparser.ConfigParser()
        cp.optionxform = str  # keep key case (``C``)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"invalid config file: {exc}") from exc
        raw = {s: dict(cp[s]) for s in cp.sections()}
    return resolve(raw)


def resolve(raw: dict) -> dict:
    """Merge ``raw`` over the defaults, type-check, and reject unknown keys."""
    cfg = copy.deepcopy(DEFAULTS)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections")
    for section, values in raw.items():
        if section not in cfg:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"section [{section}] must be a mapping")
        for key, value in values.items():
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            cfg[section][key] = _coerce(section, key, value)
    return cfg


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    fmt = "json" if path.endswith(".json") or text.lstrip().startswith("{") else "ini"
    return parse_config_text(text, fmt)


# ----------------------------------------------------------------------------
# object construction


def dataset_spec(cfg: dict, seed: int) -> DatasetSpec:
    d = cfg["dataset"]
    try:
        return DatasetSpec(d["generator"], d["n"], d["feature_dim"], d["num_classes"],
                           d["noise_level"], seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def schedule(cfg: dict) -> Schedule:
    t = cfg["train"]
    try:
        return Schedule(t["schedule"], t["C"], t["noise"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def train_config(cfg: dict, seed: int) -> NoisySGDConfig:
    t = cfg["train"]
    try:
        return NoisySGDConfig(t["batch_size"], t["iterations"], schedule(cfg), seed,
                              noise=t["noise_enabled"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def losses(cfg: dict) -> tuple:
    t = cfg["train"]
    try:
        if t["loss"] == "clipped_cross_entropy":
            train_loss = LossEvaluator.clipped_cross_entropy(t["loss_high"])
        elif t["loss"] == "squared_error":
            train_loss = LossEvaluator.squared_error(t["loss_high"])
        else:
            raise ConfigError(f"training loss must be differentiable, got {t['loss']!r}")
        if t["eval_loss"] == "zero_one":
            eval_loss = LossEvaluator.zero_one()
        elif t["eval_loss"] == t["loss"]:
            eval_loss = train_loss
        else:
            raise ConfigError(f"unknown eval_loss {t['eval_loss']!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return train_loss, eval_loss


def network(cfg: dict):
    d, nw = cfg["dataset"], cfg["network"]
    try:
        return init_network([d["feature_dim"]] + list(nw["widths"]), d["num_classes"],
                            nw["init_seed"], nw["activation"], nw["bias"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------------
# manifests


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def content_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    config_path: Optional[str]
    config: dict
    seed: Optional[int]
    version: str
    args: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # file name -> sha256
    input_hash: str = ""
    duration_s: float = 0.0

    def to_dict(self) -> dict:
        return {"subcommand": self.subcommand, "config_path": self.config_path,
                "config": self.config, "seed": self.seed, "version": self.version,
                "args": self.args, "outputs": self.outputs, "input_hash": self.input_hash,
                "duration_s": self.duration_s}

    def write(self, out_dir: str) -> str:
        path = os.path.join(out_dir, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, path: str) -> "RunManifest":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
            return cls(d["subcommand"], d.get("config_path"), d["config"], d.get("seed"),
                       d.get("version", ""), d.get("args", {}), d.get("outputs", {}),
                       d.get("input_hash", ""), d.get("duration_s", 0.0))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {path}: {exc}") from exc
