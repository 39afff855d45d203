"""Comparison methods sharing the simulator and reward with the trainer."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Sequence

import numpy as np
import yaml

from riskgen import sim
from riskgen.errors import ConfigError
from riskgen.graph import EnvState, ScenarioGraph, ScenarioSpec, build_preset
from riskgen.policy import PolicyConfig, PolicyParams
from riskgen.results import ScoredSpec, evaluate_specs, rank
from riskgen.trainer import EpochRecord, Evaluator, TrainConfig, fit

DEFAULT_GRID_CAP = 1_000_000


@dataclass(frozen=True)
class GridSpec:
    """Per-block step sizes; axis ``k`` is ``low_k + j * step_k`` while ``< high_k``."""

    steps: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(float(s) for s in self.steps))
        if any(not s > 0 for s in self.steps):
            raise ConfigError(f"grid steps must be > 0, got {self.steps}")

    def axes(self, graph: ScenarioGraph) -> list[np.ndarray]:
        if len(self.steps) != len(graph):
            raise ConfigError(f"{len(self.steps)} grid steps for {len(graph)} blocks")
        return [axis_points(b.low, b.high, s) for b, s in zip(graph.blocks, self.steps)]

    def size(self, graph: ScenarioGraph) -> int:
        return math.prod(len(a) for a in self.axes(graph))


def axis_points(low: float, high: float, step: float) -> np.ndarray:
    # round() absorbs float noise in exact ratios such as 100 / 4
    count = max(1, math.ceil(round((high - low) / step, 9)))
    return low + step * np.arange(count)


def _check_continuous(graph: ScenarioGraph) -> None:
    discrete = [b.name for b in graph.blocks if b.kind != "continuous"]
    if discrete:
        raise ConfigError(f"baselines need continuous blocks; discrete: {discrete}")


def grid_search(
    graph: ScenarioGraph,
    state: EnvState,
    grid: GridSpec | Sequence[float],
    cap: int = DEFAULT_GRID_CAP,
    sim_config: sim.SimConfig = sim.SimConfig(),
    reward_config: sim.RewardConfig = sim.RewardConfig(),
    workers: int = 1,
) -> list[ScoredSpec]:
    """Simulate every grid combination; best reward first."""
    _check_continuous(graph)
    if not isinstance(grid, GridSpec):
        grid = GridSpec(tuple(grid))
    total = grid.size(graph)
    if total > cap:
        raise ConfigError(f"grid has {total} combinations, above the cap of {cap}")
    specs = [ScenarioSpec.from_values(graph, combo) for combo in itertools.product(*grid.axes(graph))]
    return rank(evaluate_specs(specs, state, graph, sim_config, reward_config, workers))


def random_specs(graph: ScenarioGraph, count: int, rng) -> list[ScenarioSpec]:
    """``count`` specs with every block uniform over its physical range."""
    _check_continuous(graph)
    if count < 1:
        raise ConfigError("count must be >= 1")
    lows = np.array([b.low for b in graph.blocks])
    highs = np.array([b.high for b in graph.blocks])
    draws = rng.uniform(lows, highs, size=(count, len(graph)))
    return [ScenarioSpec.from_values(graph, row) for row in draws]


def random_sampling(
    graph: ScenarioGraph,
    state: EnvState | Sequence[EnvState],
    count: int,
    rng,
    sim_config: sim.SimConfig = sim.SimConfig(),
    reward_config: sim.RewardConfig = sim.RewardConfig(),
    workers: int = 1,
) -> list[ScoredSpec]:
    """Uniform specs, scored in draw order (not ranked)."""
    specs = random_specs(graph, count, rng)
    return evaluate_specs(specs, state, graph, sim_config, reward_config, workers)


def independent_policy_train(
    graph: ScenarioGraph,
    config: TrainConfig,
    policy: PolicyConfig,
    sampler: Callable,
    evaluate: Evaluator,
    on_epoch: Callable[[PolicyParams, EpochRecord], None] | None = None,
) -> tuple[PolicyParams, list[EpochRecord]]:
    """The trainer on a parent-free copy of ``graph``: every head sees only the state."""
    return fit(graph.independent(), config, policy, sampler, evaluate, on_epoch)


def _human_table() -> dict:
    text = resources.files("riskgen").joinpath("data/human_design.yaml").read_text()
    return yaml.safe_load(text)


def human_design_route(name: str) -> str:
    """Held-out route name the fixed spec for ``name`` was authored against."""
    table = _human_table()
    if name not in table:
        raise ConfigError(f"no human-design spec for preset {name!r}")
    return table[name]["route"]


def human_design(graph: ScenarioGraph | str, name: str | None = None) -> ScenarioSpec:
    """The fixed, state-independent spec shipped for a preset."""
    if isinstance(graph, str):
        graph = build_preset(graph)
    name = name or graph.name
    table = _human_table()
    if name not in table:
        raise ConfigError(f"no human-design spec for preset {name!r}")
    values = table[name]["values"]
    missing = [n for n in graph.names if n not in values]
    if missing:
        raise ConfigError(f"human-design spec {name!r} lacks blocks {missing}")
    spec = ScenarioSpec.from_values(graph, [values[n] for n in graph.names])
    spec.check(graph)
    return spec
