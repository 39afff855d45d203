"""Scored scenarios: batch evaluation and the ranked CSV format.

Training evaluation, every baseline and ``eval`` all write the same ranked
table, so methods can be compared with one reader.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from riskgen import sim
from riskgen.errors import ConfigError
from riskgen.graph import EnvState, ScenarioGraph, ScenarioSpec


@dataclass(frozen=True)
class ScoredSpec:
    spec: ScenarioSpec
    reward: float
    collision: bool
    min_separation: float
    route_occupied: bool


def score(
    spec: ScenarioSpec,
    state: EnvState,
    graph: ScenarioGraph,
    sim_config: sim.SimConfig = sim.SimConfig(),
    reward_config: sim.RewardConfig = sim.RewardConfig(),
) -> ScoredSpec:
    result = sim.simulate(spec, state, graph, sim_config, record_trace=False)
    return ScoredSpec(
        spec, sim.compute_reward(result, reward_config), result.collision,
        result.min_separation, result.route_occupied,
    )


def _score_chunk(args) -> list[ScoredSpec]:
    specs, states, graph, sim_config, reward_config = args
    return [score(sp, st, graph, sim_config, reward_config) for sp, st in zip(specs, states)]


def evaluate_specs(
    specs: Sequence[ScenarioSpec],
    states: Sequence[EnvState] | EnvState,
    graph: ScenarioGraph,
    sim_config: sim.SimConfig = sim.SimConfig(),
    reward_config: sim.RewardConfig = sim.RewardConfig(),
    workers: int = 1,
) -> list[ScoredSpec]:
    """Simulate and score each spec, in input order.

    Rollouts are pure, so ``workers > 1`` only changes wall time, never the
    result.
    """
    if isinstance(states, EnvState):
        states = [states] * len(specs)
    if len(states) != len(specs):
        raise ConfigError(f"{len(specs)} specs but {len(states)} states")
    if workers < 1:
        raise ConfigError("workers must be >= 1")
    if workers == 1 or len(specs) < 2 * workers:
        return _score_chunk((specs, states, graph, sim_config, reward_config))
    size = -(-len(specs) // (workers * 4))
    chunks = [
        (specs[i:i + size], states[i:i + size], graph, sim_config, reward_config)
        for i in range(0, len(specs), size)
    ]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return [item for part in pool.map(_score_chunk, chunks) for item in part]


def rank(results: Sequence[ScoredSpec]) -> list[ScoredSpec]:
    """Best first; ties keep a canonical order by block values."""
    return sorted(results, key=lambda r: (-r.reward, r.spec.values))


def collision_fraction(results: Sequence[ScoredSpec]) -> float:
    if not results:
        raise ConfigError("no results")
    return sum(r.collision for r in results) / len(results)


def write_ranked(path: str | Path, graph: ScenarioGraph, results: Sequence[ScoredSpec]) -> None:
    header = ["rank", "reward", "collision", "min_separation", "route_occupied", *graph.names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, r in enumerate(rank(results), 1):
            writer.writerow([
                i, repr(r.reward), int(r.collision), repr(r.min_separation),
                int(r.route_occupied), *(repr(v) for v in r.spec.values),
            ])


def read_ranked(path: str | Path, graph: ScenarioGraph) -> list[ScoredSpec]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    missing = [n for n in graph.names if rows and n not in rows[0]]
    if missing:
        raise ConfigError(f"{path}: missing block columns {missing}")
    try:
        return [
            ScoredSpec(
                ScenarioSpec.from_values(graph, [float(row[n]) for n in graph.names]),
                float(row["reward"]), row["collision"] == "1",
                float(row["min_separation"]), row["route_occupied"] == "1",
            )
            for row in rows
        ]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed ranked table ({exc})") from exc
