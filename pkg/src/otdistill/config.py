"""Experiment configuration files.

A config is a JSON object::

    {
      "version": 1,
      "data": {"n_samples": 6000, "task": "classification", ...},
      "train": {"batch_size": 128, "anchors": 30, ...},
      "methods": ["none", "mt-pkdot"],
      "ablate": {"batch_sizes": [32, 64, 128], "anchors": [10, 20, 30]}
    }

``data`` holds :class:`~otdistill.synthdata.GenSpec` fields; alternatively
``data_dir`` points at a directory written by ``otdistill gen``. ``train``
holds :class:`~otdistill.training.TrainConfig` fields. Everything except
``version`` is optional. Unknown keys at any level are errors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .synthdata import Dataset, GenSpec, generate
from .training import TrainConfig

CONFIG_VERSION = 1
TOP_LEVEL_KEYS = {"version", "data", "data_dir", "train", "methods", "ablate"}
ABLATE_KEYS = {"batch_sizes", "anchors", "centroid"}
DEFAULT_BATCH_GRID = (32, 64, 128)
DEFAULT_ANCHOR_GRID = (10, 20, 30)


@dataclass(frozen=True)
class AblationGrid:
    batch_sizes: tuple = DEFAULT_BATCH_GRID
    anchors: tuple = DEFAULT_ANCHOR_GRID
    centroid: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    data: GenSpec = field(default_factory=GenSpec)
    data_dir: str | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    methods: tuple | None = None
    ablate: AblationGrid = field(default_factory=AblationGrid)

    def dataset(self, seed: int) -> Dataset:
        """The dataset for one seed: loaded from ``data_dir`` (seed ignored)
        or generated from ``data`` with the seed substituted."""
        if self.data_dir is not None:
            return Dataset.load(self.data_dir)
        return generate(self.data.with_seed(seed))

    def train_config(self, seed: int, **changes) -> TrainConfig:
        return self.train.replace(seed=int(seed), **changes)

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict:
        out = {"version": CONFIG_VERSION, "train": self.train.to_dict()}
        if self.data_dir is not None:
            out["data_dir"] = self.data_dir
        else:
            out["data"] = self.data.to_dict()
        if self.methods is not None:
            out["methods"] = list(self.methods)
        out["ablate"] = {"batch_sizes": list(self.ablate.batch_sizes),
                         "anchors": list(self.ablate.anchors), "centroid": self.ablate.centroid}
        return out


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {raw.get('version')!r}")
    if "data" in raw and "data_dir" in raw:
        raise ConfigError("give either 'data' or 'data_dir', not both")
    data = GenSpec.from_dict(raw.get("data", {}))
    data_dir = raw.get("data_dir")
    if data_dir is not None and base_dir is not None and not Path(data_dir).is_absolute():
        data_dir = str(base_dir / data_dir)
    train = TrainConfig.from_dict(raw.get("train", {}))
    methods = raw.get("methods")
    if methods is not None:
        from .harness import LADDER_NAMES  # local: harness imports this module
        bad = [m for m in methods if m not in LADDER_NAMES]
        if bad or not methods:
            raise ConfigError(f"unknown methods {bad}; choose from {list(LADDER_NAMES)}")
        methods = tuple(methods)
    ab = raw.get("ablate", {})
    unknown = set(ab) - ABLATE_KEYS
    if unknown:
        raise ConfigError(f"unknown ablate keys: {sorted(unknown)}")
    grid = AblationGrid(tuple(ab.get("batch_sizes", DEFAULT_BATCH_GRID)),
                        tuple(ab.get("anchors", DEFAULT_ANCHOR_GRID)),
                        bool(ab.get("centroid", True)))
    return ExperimentConfig(data, data_dir, train, methods, grid)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw, path.parent)
