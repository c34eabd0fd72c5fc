# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


import os
from dataclasses import dataclass, field, asdict

import yaml

from data.roads import SegmentGenConfig
from data.scenarios import FEATURE_NAMES, ScenarioConfig, check_feature_names
from models.trainer import TrainConfig
from sim.vehicle import DEGRADATION_PRESETS
from stats.diagnostics import DEFAULT_DUMMIES, DEFAULT_THRESHOLDS, GroupingSpec
from utils.errors import ConfigError
from utils.paths import default_config


__all__ = ["SplitConfig", "GateConfig", "PipelineConfig", "load_config"]


@dataclass
class SplitConfig:
    n_cal: int = 4000
    n_test: int = 4000
    n_holdout: int = 2000  # carved from train for model selection
    seed: int = 0

    def __post_init__(self):
        for name in ("n_cal", "n_test", "n_holdout"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")


@dataclass
class GateConfig:
    segment: int = 0
    v_q: float = 50.0  # km/h
    accels: tuple = (2.5, 3.0, 3.5, 4.0, 4.5)
    degradation: str = "D0"
    maneuver: str = "LaneChange"
    direction: int = 1

    def __post_init__(self):
        self.accels = tuple(float(a) for a in self.accels)
        if not self.accels:
            raise ConfigError("accels", "at least one candidate")
        if self.degradation not in DEGRADATION_PRESETS:
            raise ConfigError("degradation", f"choose one of {sorted(DEGRADATION_PRESETS)}")
        if self.maneuver not in ("LaneChange", "LaneFollow"):
            raise ConfigError("maneuver", "LaneChange or LaneFollow")
        if self.direction not in (-1, 1):
            raise ConfigError("direction", "-1 (right) or 1 (left)")


def _default_grid():
    return [
        {"hidden_widths": [380, 380], "lr": 5e-4},
        {"hidden_widths": [128, 128], "lr": 1e-3},
        {"hidden_widths": [256, 256, 256], "lr": 5e-4},
    ]


@dataclass
class PipelineConfig:
    seed: int = 0
    out: str = "results/default"
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    roads: SegmentGenConfig = field(default_factory=SegmentGenConfig)
    scenarios: ScenarioConfig = field(default_factory=ScenarioConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: list = field(default_factory=_default_grid)
    feature_names: tuple = FEATURE_NAMES
    alpha: float = 0.1
    grouping: str = "curvature:0.003"
    tolerance: float = 0.01
    select_on: str = "holdout"
    bins: int = 16
    dummies: tuple = DEFAULT_DUMMIES
    thresholds: tuple = DEFAULT_THRESHOLDS
    gate: GateConfig = field(default_factory=GateConfig)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha", "must lie in (0, 1)")
        if not 0.0 <= self.tolerance < 1.0:
            raise ConfigError("tolerance", "must lie in [0, 1)")
        if self.select_on not in ("holdout", "test"):
            raise ConfigError("select_on", "holdout or test")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if self.bins < 2:
            raise ConfigError("bins", "must be >= 2")
        self.feature_names = check_feature_names(self.feature_names)
        self.dummies = tuple((int(n), float(ell)) for n, ell in self.dummies)
        self.thresholds = tuple(float(t) for t in self.thresholds)
        GroupingSpec.parse(self.grouping)
        total = self.scenarios.n_segments * self.scenarios.n_maneuvers * self.scenarios.n_degradations
        if self.split.n_cal + self.split.n_test >= total:
            raise ConfigError("split", f"calibration and test sizes exceed the {total} scenarios")
        for point in self.grid:
            unknown = set(point) - set(TrainConfig.__dataclass_fields__)
            if unknown:
                raise ConfigError("grid", f"unknown training fields {sorted(unknown)}")

    @property
    def grouping_spec(self):
        return GroupingSpec.parse(self.grouping)

    @property
    def target_coverage(self):
        return 1.0 - self.alpha

    def to_dict(self):
        return _plain(asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_SECTIONS = {
    "roads": SegmentGenConfig,
    "scenarios": ScenarioConfig,
    "split": SplitConfig,
    "train": TrainConfig,
    "gate": GateConfig,
}


def _build(cls, values, name):
    if not isinstance(values, dict):
        raise ConfigError(name, "expected a mapping")
    unknown = set(values) - set(cls.__dataclass_fields__)
    if unknown:
        raise ConfigError(name, f"unknown keys {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(name, str(exc)) from exc


def load_config(path=None, overrides=None):
    """PipelineConfig from a YAML (or JSON) file with flat CLI overrides applied on top."""
    path = path or default_config
    if not os.path.isfile(path):
        raise ConfigError("config", f"no such file {path}")
    with open(path, "r") as f:
        try:
            raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a mapping")

    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key in PipelineConfig.__dataclass_fields__ and key not in _SECTIONS:
            raw[key] = val

    # split and training seeds follow the pipeline seed unless pinned in the file
    seed = raw.get("seed", 0)
    for section in ("split", "train"):
        raw.setdefault(section, {})
        if isinstance(raw[section], dict):
            raw[section].setdefault("seed", seed)

    values = {}
    for key, val in raw.items():
        if key not in PipelineConfig.__dataclass_fields__:
            raise ConfigError(key, "unknown configuration key")
        values[key] = _build(_SECTIONS[key], val, key) if key in _SECTIONS else val
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
