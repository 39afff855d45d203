"""Comparison metrics over epoch records, and policy density heatmaps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from riskgen.errors import ConfigError
from riskgen.graph import EnvState, ScenarioGraph, route_frame, to_raw
from riskgen.policy import PolicyParams, conditionals
from riskgen.trainer import EpochRecord

STABILITY_WINDOW = 10
STABILITY_TOLERANCE = 0.05
HEATMAP_BINS_1D = 256
HEATMAP_BINS_2D = 64


def collision_rate(records: Sequence[EpochRecord], window: int | None = None) -> float:
    """Mean per-epoch collision fraction over the final ``window`` epochs."""
    if not records:
        raise ConfigError("no epoch records")
    window = len(records) if window is None else window
    if not 1 <= window <= len(records):
        raise ConfigError(f"window {window} outside 1..{len(records)}")
    return float(np.mean([r.collision_rate for r in records[-window:]]))


def moving_average(values: Sequence[float], window: int = STABILITY_WINDOW) -> np.ndarray:
    """Trailing means; entry ``i`` covers ``values[i - window + 1 : i + 1]``."""
    v = np.asarray(values, dtype=float)
    if len(v) < window:
        return np.zeros(0)
    c = np.concatenate(([0.0], np.cumsum(v)))
    return (c[window:] - c[:-window]) / window


def iterations_to_stability(
    records: Sequence[EpochRecord] | Sequence[float],
    window: int = STABILITY_WINDOW,
    tolerance: float = STABILITY_TOLERANCE,
) -> int | None:
    """First epoch ``t`` from which the moving-average collision rate stays flat.

    With ``MA_t`` the trailing ``window``-epoch mean (defined from epoch
    ``window``), ``t`` is the smallest epoch ``>= window + 1`` such that
    ``|MA_{t+j} - MA_{t-1}| < tolerance`` for ``j = 0 .. window - 1``. A
    constant series is stable at epoch 11; fewer than 20 epochs never are.
    Accepts records or bare per-epoch rates.
    """
    rates = [r.collision_rate if isinstance(r, EpochRecord) else float(r) for r in records]
    ma = moving_average(rates, window)
    # ma[i] is MA at epoch i + window
    for t in range(window + 1, len(rates) - window + 2):
        ref = ma[t - 1 - window]
        run = ma[t - window:t]
        if len(run) == window and np.all(np.abs(run - ref) < tolerance):
            return t
    return None


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation over repeated experiments."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ConfigError("no values to summarise")
    return float(v.mean()), float(v.std())


@dataclass(frozen=True)
class Heatmap:
    """Cell probabilities over physical block ranges.

    ``probs`` has one axis per entry of ``blocks``; ``edges[i]`` holds the
    ``n_i + 1`` physical cell edges along axis ``i``.
    """

    blocks: tuple[str, ...]
    edges: tuple[np.ndarray, ...]
    probs: np.ndarray
    condition: Mapping[str, float]

    @property
    def centers(self) -> tuple[np.ndarray, ...]:
        return tuple(0.5 * (e[:-1] + e[1:]) for e in self.edges)

    def argmax(self) -> tuple[float, ...]:
        """Physical center of the most probable cell."""
        idx = np.unravel_index(int(np.argmax(self.probs)), self.probs.shape)
        return tuple(float(c[i]) for c, i in zip(self.centers, idx))


def _normalise_log(logp: np.ndarray) -> np.ndarray:
    # log domain so narrow heads on fine grids cannot underflow to all zeros
    p = np.exp(logp - logp.max())
    return p / p.sum()


def _mean_actions(
    params: PolicyParams, state: EnvState, graph: ScenarioGraph, fixed: Mapping[int, float], upto: int
) -> np.ndarray:
    """Raw actions of blocks ``< upto``: fixed where given, else the conditional mean."""
    acts = np.zeros((1, len(graph)))
    for k in range(upto):
        if k in fixed:
            acts[0, k] = fixed[k]
        else:
            mu, _ = conditionals(params, state, graph, acts)
            acts[0, k] = mu[0, k]
    return acts


def _resolve(graph: ScenarioGraph, block: str) -> int:
    if block not in graph.names:
        raise ConfigError(f"unknown block {block!r}; graph has {list(graph.names)}")
    return graph.index(block)


def _raw_condition(graph: ScenarioGraph, condition: Mapping[str, float] | None) -> dict[int, float]:
    out = {}
    for name, value in (condition or {}).items():
        out[_resolve(graph, name)] = to_raw(float(value), graph.block(name))
    return out


def _gaussian_logpdf(x, mu, sigma):
    return -np.log(sigma) - 0.5 * ((x - mu) / sigma) ** 2


def policy_heatmap(
    params: PolicyParams,
    state: EnvState,
    graph: ScenarioGraph,
    block: str,
    resolution: int = HEATMAP_BINS_1D,
    condition: Mapping[str, float] | None = None,
) -> Heatmap:
    """Density of one block over its physical range, normalised over cells.

    Ancestors not named in ``condition`` (physical values) sit at their
    conditional means, evaluated in graph order.
    """
    k = _resolve(graph, block)
    if resolution < 1:
        raise ConfigError("heatmap resolution must be >= 1")
    fixed = _raw_condition(graph, condition)
    acts = _mean_actions(params, state, graph, fixed, k)
    mu, sigma = conditionals(params, state, graph, acts)
    b = graph.blocks[k]
    edges = np.linspace(b.low, b.high, resolution + 1)
    raw_centers = (0.5 * (edges[:-1] + edges[1:]) - b.shift) / b.scale
    probs = _normalise_log(_gaussian_logpdf(raw_centers, mu[0, k], sigma[0, k]))
    used = {graph.names[i]: float(acts[0, i] * graph.blocks[i].scale + graph.blocks[i].shift) for i in range(k)}
    return Heatmap((block,), (edges,), probs, used)


def joint_heatmap(
    params: PolicyParams,
    state: EnvState,
    graph: ScenarioGraph,
    blocks: tuple[str, str] = ("X", "Y"),
    resolution: int = HEATMAP_BINS_2D,
) -> Heatmap:
    """Joint density of two blocks, ``p(first) * p(second | first)`` on a grid.

    Other ancestors of the two blocks sit at their conditional means.
    """
    i, j = (_resolve(graph, name) for name in blocks)
    if i >= j:
        raise ConfigError(f"blocks {blocks} must be distinct and in graph order")
    if resolution < 1:
        raise ConfigError("heatmap resolution must be >= 1")
    bi, bj = graph.blocks[i], graph.blocks[j]
    edges_i = np.linspace(bi.low, bi.high, resolution + 1)
    edges_j = np.linspace(bj.low, bj.high, resolution + 1)
    ci = (0.5 * (edges_i[:-1] + edges_i[1:]) - bi.shift) / bi.scale
    cj = (0.5 * (edges_j[:-1] + edges_j[1:]) - bj.shift) / bj.scale

    base = _mean_actions(params, state, graph, {}, j)
    mu, sigma = conditionals(params, state, graph, base)
    logp_i = _gaussian_logpdf(ci, mu[0, i], sigma[0, i])
    # blocks between i and j may depend on i, so re-walk them per cell of i
    acts = np.repeat(base, resolution, axis=0)
    acts[:, i] = ci
    for m in range(i + 1, j):
        mu_m, _ = conditionals(params, np.repeat(state.encoded[None], resolution, 0), graph, acts)
        acts[:, m] = mu_m[:, m]
    mu_j, sigma_j = conditionals(params, np.repeat(state.encoded[None], resolution, 0), graph, acts)
    logp_j = _gaussian_logpdf(cj[None, :], mu_j[:, j:j + 1], sigma_j[:, j:j + 1])
    probs = _normalise_log(logp_i[:, None] + logp_j)
    return Heatmap(tuple(blocks), (edges_i, edges_j), probs, {})


def marginal_heatmap(
    params: PolicyParams,
    state: EnvState,
    graph: ScenarioGraph,
    block: str,
    over: tuple[str, str] = ("X", "Y"),
    resolution: int = HEATMAP_BINS_1D,
    over_resolution: int = HEATMAP_BINS_2D,
) -> Heatmap:
    """``block``'s field averaged over the joint grid of two earlier blocks."""
    k = _resolve(graph, block)
    joint = joint_heatmap(params, state, graph, over, over_resolution)
    ci, cj = joint.centers
    total = np.zeros(resolution)
    for a, x in enumerate(ci):
        for b, y in enumerate(cj):
            w = joint.probs[a, b]
            if w < 1e-12:
                continue
            field = policy_heatmap(params, state, graph, block, resolution, {over[0]: x, over[1]: y})
            total += w * field.probs
    b = graph.blocks[k]
    return Heatmap((block,), (np.linspace(b.low, b.high, resolution + 1),), total / total.sum(), {})


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ConfigError("distributions differ in shape")
    return 0.5 * float(np.abs(p / p.sum() - q / q.sum()).sum())


def distance_to_route(point: Sequence[float], route) -> float:
    """Distance from a route-frame point to the nearest waypoint of ``route``."""
    local = route_frame(route)
    return float(np.min(np.hypot(local[:, 0] - point[0], local[:, 1] - point[1])))
