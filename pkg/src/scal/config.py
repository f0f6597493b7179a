"""Flat ``section.key = value`` experiment configuration.

Example::

    # comments start with '#'
    data.source = synthetic
    synth.multiplier = 1.4
    scal.patience = 3
    embedding.n_neighbors = 15
    clustering.algorithm = dbscan
    output.dir = runs/demo
    seed = 7

Any ``model.*`` key fixes that hyperparameter and skips tuning.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

from .clustering import AGGLOMERATIVE, DBSCAN, KMEANS
from .data import CLASSIFICATION, REGRESSION
from .gbdt import Hyperparameters
from .refiner import ExplanationConfig, ScalConfig
from .rules import RuleConfig
from .synth import SyntheticShiftSpec


class ConfigError(ValueError):
    pass


SOURCES = ("synthetic", "csv", "household_power")


@dataclass
class ExperimentConfig:
    source: str = "synthetic"
    path: str | None = None
    train_path: str | None = None
    test_path: str | None = None
    schema: dict = field(default_factory=lambda: {"timestamp": "timestamp", "target": "consumption"})
    boundary: str | None = None
    task: str = REGRESSION
    standardize: bool = True
    synth: SyntheticShiftSpec = field(default_factory=SyntheticShiftSpec)
    synth_entities: int = 1
    model_overrides: dict = field(default_factory=dict)
    scal: ScalConfig = field(default_factory=ScalConfig)
    explanation: ExplanationConfig = field(default_factory=ExplanationConfig)
    rules: RuleConfig = field(default_factory=RuleConfig)
    out_dir: str = "scal-out"
    seed: int = 0

    def validate(self):
        if self.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}")
        if self.task not in (REGRESSION, CLASSIFICATION):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.source == "csv":
            if self.path is None and (self.train_path is None or self.test_path is None):
                raise ConfigError("csv source needs data.path or data.train + data.test")
            if self.path is not None and self.boundary is None:
                raise ConfigError("data.path needs split.boundary")
            for p in (self.path, self.train_path, self.test_path):
                if p is not None and not os.path.exists(p):
                    raise ConfigError(f"missing file: {p}")
        if self.source == "household_power" and (self.path is None or not os.path.exists(self.path)):
            raise ConfigError("household_power source needs an existing data.path")
        if self.explanation.clustering not in (DBSCAN, KMEANS, AGGLOMERATIVE):
            raise ConfigError(f"unknown clustering algorithm {self.explanation.clustering!r}")
        if self.synth_entities < 1:
            raise ConfigError("synth.entities must be >= 1")
        return self

    def fixed_hyperparameters(self):
        if not self.model_overrides:
            return None
        return Hyperparameters(**{"seed": self.seed, **self.model_overrides})


def _coerce(value: str, like):
    if isinstance(like, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, float):
        return float(value)
    if isinstance(like, tuple):
        return tuple(int(v) for v in value.replace(",", " ").split())
    return value


def _update_dataclass(obj, key, value):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    if key not in fields:
        raise ConfigError(f"unknown key {key!r} for {type(obj).__name__}")
    current = getattr(obj, key)
    if current is None:
        if value.lower() in ("none", "auto", ""):
            coerced = None
        else:
            coerced = float(value) if key == "eps" else int(value)
    else:
        coerced = _coerce(value, current)
    return dataclasses.replace(obj, **{key: coerced})


def parse_lines(lines):
    pairs = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs.append((key, value))
    return pairs


def _list(value):
    return [v.strip() for v in value.split(",") if v.strip()]


_MODEL_TYPES = {f.name: f.type for f in dataclasses.fields(Hyperparameters)}


def apply(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    for key, value in pairs:
        section, _, name = key.partition(".")
        if not name:
            if section == "seed":
                cfg.seed = int(value)
            elif section == "task":
                cfg.task = value
            else:
                raise ConfigError(f"unknown key {key!r}")
            continue
        if section == "data":
            if name == "source":
                cfg.source = value
            elif name == "path":
                cfg.path = value
            elif name == "train":
                cfg.train_path = value
            elif name == "test":
                cfg.test_path = value
            elif name in ("timestamp", "target", "entity"):
                cfg.schema[name] = value
            elif name in ("exogenous", "static"):
                cfg.schema[name] = _list(value)
            elif name == "standardize":
                cfg.standardize = _coerce(value, True)
            else:
                raise ConfigError(f"unknown key {key!r}")
        elif section == "split" and name == "boundary":
            cfg.boundary = value
        elif section == "synth":
            if name == "entities":
                cfg.synth_entities = int(value)
            else:
                cfg.synth = _update_dataclass(cfg.synth, name, value)
        elif section == "model":
            if name not in _MODEL_TYPES:
                raise ConfigError(f"unknown model key {name!r}")
            like = getattr(Hyperparameters(), name)
            cfg.model_overrides[name] = _coerce(value, like)
        elif section == "scal":
            cfg.scal = _update_dataclass(cfg.scal, name, value)
        elif section == "embedding":
            emb = _update_dataclass(cfg.explanation.embedding, name, value)
            cfg.explanation = dataclasses.replace(cfg.explanation, embedding=emb)
        elif section == "clustering":
            if name == "algorithm":
                name = "clustering"
            cfg.explanation = _update_dataclass(cfg.explanation, name, value)
        elif section == "rules":
            cfg.rules = _update_dataclass(cfg.rules, name, value)
        elif section == "output" and name == "dir":
            cfg.out_dir = value
        else:
            raise ConfigError(f"unknown key {key!r}")
    return cfg


def propagate_seed(cfg: ExperimentConfig) -> ExperimentConfig:
    """Push the global seed into every seeded sub-config."""
    cfg.scal = dataclasses.replace(cfg.scal, seed=cfg.seed)
    emb = dataclasses.replace(cfg.explanation.embedding, seed=cfg.seed)
    cfg.explanation = dataclasses.replace(cfg.explanation, embedding=emb)
    cfg.rules = dataclasses.replace(cfg.rules, seed=cfg.seed)
    cfg.synth = dataclasses.replace(cfg.synth, seed=cfg.seed)
    return cfg


def load(path=None, overrides=(), seed=None, out_dir=None) -> ExperimentConfig:
    """Build a config from an optional file, then ``key=value`` overrides and flags."""
    cfg = ExperimentConfig()
    pairs = []
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"missing config file: {path}")
        with open(path, encoding="utf-8") as fh:
            pairs.extend(parse_lines(fh))
    pairs.extend(parse_lines(overrides))
    if seed is not None:
        pairs.append(("seed", str(seed)))
    # seed first so that explicit sub-seeds in the file still win
    seeds = [p for p in pairs if p[0] == "seed"]
    for p in seeds[-1:]:
        cfg.seed = int(p[1])
    propagate_seed(cfg)
    apply(cfg, [p for p in pairs if p[0] != "seed"])
    if out_dir is not None:
        cfg.out_dir = out_dir
    return cfg.validate()
