"""Experiment configuration: one YAML document, one section per subsystem.

Every field has a default, so an almost empty document (just ``scenario``)
reproduces the reference setting: 100 epochs, learning rate 0.008, batch
16, entropy weight 0.001, collision bonus 10, occupancy penalty 20 and
occupancy threshold 3 m.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from riskgen.errors import ConfigError
from riskgen.graph import SPEED_RANGE_KMH, ScenarioGraph, build_preset
from riskgen.policy import PolicyConfig
from riskgen.routes import heldout_routes, intersection_route, training_routes
from riskgen.sim import RewardConfig, SimConfig
from riskgen.trainer import TrainConfig

ENV_SEED = "RISKGEN_SEED"
ENV_WORKERS = "RISKGEN_WORKERS"


@dataclass(frozen=True)
class RoutesConfig:
    """``route_set`` is ``training``, ``heldout`` or an explicit list.

    List items are either ``{waypoints: [[x, y], ...]}`` or keyword
    arguments of :func:`riskgen.routes.intersection_route`.
    """

    route_set: Any = "training"
    speed_range: tuple[float, float] = SPEED_RANGE_KMH

    def __post_init__(self):
        lo, hi = self.speed_range
        if not lo <= hi:
            raise ConfigError(f"routes.speed_range must be increasing, got {self.speed_range}")
        object.__setattr__(self, "speed_range", (float(lo), float(hi)))
        self.build()

    def build(self) -> list[np.ndarray]:
        spec = self.route_set
        if spec == "training":
            return training_routes()
        if spec == "heldout":
            return list(heldout_routes().values())
        if not isinstance(spec, (list, tuple)) or not spec:
            raise ConfigError("routes.route_set must be 'training', 'heldout' or a nonempty list")
        routes = []
        for i, item in enumerate(spec):
            if not isinstance(item, dict):
                raise ConfigError(f"routes.route_set[{i}] must be a mapping")
            if "waypoints" in item:
                routes.append(np.asarray(item["waypoints"], dtype=float))
            else:
                try:
                    routes.append(intersection_route(**item))
                except TypeError as exc:
                    raise ConfigError(f"routes.route_set[{i}]: {exc}") from exc
        return routes


@dataclass(frozen=True)
class BaselineConfig:
    grid_steps: tuple[float, ...] = (4.0, 3.0, 20.0, 10.0)
    grid_cap: int = 1_000_000
    random_count: int = 100
    repetitions: int = 30

    def __post_init__(self):
        object.__setattr__(self, "grid_steps", tuple(float(s) for s in self.grid_steps))
        if any(s <= 0 for s in self.grid_steps):
            raise ConfigError("baseline.grid_steps must all be > 0")
        if self.random_count < 1:
            raise ConfigError("baseline.random_count must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("baseline.repetitions must be >= 1")


_SECTIONS = {
    "train": TrainConfig,
    "policy": PolicyConfig,
    "reward": RewardConfig,
    "sim": SimConfig,
    "routes": RoutesConfig,
    "baseline": BaselineConfig,
}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str | dict
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    routes: RoutesConfig = field(default_factory=RoutesConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    workers: int = 1

    def graph(self) -> ScenarioGraph:
        if isinstance(self.scenario, dict):
            return ScenarioGraph.from_dict(self.scenario)
        return build_preset(self.scenario)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"scenario": self.scenario, "workers": self.workers}
        for name in _SECTIONS:
            section = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in section.items()}
        return out

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **sections) -> "ExperimentConfig":
        return dataclasses.replace(self, **sections)


def _coerce(section: str, name: str, value: Any, default: Any) -> Any:
    where = f"{section}.{name}"
    if default is None:
        # optional numeric knobs such as policy.sigma_cap
        if value is None:
            return None
        return _coerce(section, name, value, 0.0)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _build_section(name: str, cls, data: Any):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown field(s) in {name}: {', '.join(unknown)}")
    defaults = cls()
    kwargs = {
        key: _coerce(name, key, value, getattr(defaults, key)) for key, value in data.items()
    }
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def from_dict(data: Any) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config document must be a mapping")
    unknown = sorted(set(data) - set(_SECTIONS) - {"scenario", "workers"})
    if unknown:
        raise ConfigError(f"unknown top-level field(s): {', '.join(unknown)}")
    if "scenario" not in data or data["scenario"] in (None, ""):
        raise ConfigError("scenario: missing required field (preset name or graph mapping)")
    scenario = data["scenario"]
    if not isinstance(scenario, (str, dict)):
        raise ConfigError("scenario: expected a preset name or a graph mapping")
    workers = _coerce("config", "workers", data.get("workers", 1), 1)
    if workers < 1:
        raise ConfigError("workers: must be >= 1")
    sections = {name: _build_section(name, cls, data.get(name)) for name, cls in _SECTIONS.items()}
    config = ExperimentConfig(scenario=scenario, workers=workers, **sections)
    config.graph()
    return config


def loads(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return from_dict(data)


def load(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def apply_env(config: ExperimentConfig, environ=os.environ) -> ExperimentConfig:
    """Apply ``RISKGEN_SEED`` / ``RISKGEN_WORKERS`` overrides."""
    if environ.get(ENV_SEED):
        try:
            seed = int(environ[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED} must be an integer") from None
        config = config.replace(train=dataclasses.replace(config.train, seed=seed))
    if environ.get(ENV_WORKERS):
        try:
            workers = int(environ[ENV_WORKERS])
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer") from None
        if workers < 1:
            raise ConfigError(f"{ENV_WORKERS} must be >= 1")
        config = config.replace(workers=workers)
    return config
