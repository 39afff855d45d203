"""Scenario families as DAGs of parameter blocks, plus state encoding.

A scenario family is an ordered list of blocks. Each block is one scenario
parameter (spawn X/Y, heading, trigger distance, speed) and may condition on
blocks listed before it. Raw policy actions are range fractions: ``a = 0``
maps to the block's centre ``shift`` and ``a = +-0.5`` to its range edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from riskgen.errors import ConfigError, NumericError

SPEED_RANGE_KMH = (20.0, 50.0)
ACTORS = ("cyclist", "vehicle")
ACTIVATIONS = ("trigger", "immediate")


@dataclass(frozen=True)
class BlockDef:
    name: str
    scale: float
    shift: float
    parents: tuple[str, ...] = ()
    kind: str = "continuous"

    def __post_init__(self):
        if self.kind not in ("continuous", "discrete"):
            raise ConfigError(f"block {self.name!r}: unknown kind {self.kind!r}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ConfigError(f"block {self.name!r}: scale must be > 0, got {self.scale}")
        if not math.isfinite(self.shift):
            raise ConfigError(f"block {self.name!r}: shift must be finite")
        object.__setattr__(self, "parents", tuple(self.parents))

    @property
    def low(self) -> float:
        return self.shift - self.scale / 2

    @property
    def high(self) -> float:
        return self.shift + self.scale / 2


@dataclass(frozen=True)
class ScenarioGraph:
    """Ordered blocks (parents first) plus how the generated actor behaves.

    ``actor`` picks the obstacle footprint, ``activation`` whether it waits
    for the ego to come within the ``D`` block's distance or moves at once,
    and ``heading_deg`` is the fixed heading used when there is no ``theta``
    block.
    """

    name: str
    blocks: tuple[BlockDef, ...]
    actor: str = "cyclist"
    activation: str = "trigger"
    heading_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        if not self.blocks:
            raise ConfigError(f"graph {self.name!r} has no blocks")
        if self.actor not in ACTORS:
            raise ConfigError(f"graph {self.name!r}: unknown actor {self.actor!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"graph {self.name!r}: unknown activation {self.activation!r}")
        seen: set[str] = set()
        for block in self.blocks:
            if block.name in seen:
                raise ConfigError(f"graph {self.name!r}: duplicate block {block.name!r}")
            for parent in block.parents:
                if parent not in seen:
                    raise ConfigError(
                        f"graph {self.name!r}: block {block.name!r} references "
                        f"{parent!r} before it is defined"
                    )
            seen.add(block.name)
        if self.activation == "trigger" and "D" not in seen:
            raise ConfigError(f"graph {self.name!r}: trigger activation needs a 'D' block")

    @property
    def names(self) -> list[str]:
        return [b.name for b in self.blocks]

    def __len__(self) -> int:
        return len(self.blocks)

    def index(self, name: str) -> int:
        for i, block in enumerate(self.blocks):
            if block.name == name:
                return i
        raise ConfigError(f"graph {self.name!r} has no block {name!r}")

    def block(self, name: str) -> BlockDef:
        return self.blocks[self.index(name)]

    def parent_indices(self, k: int) -> list[int]:
        return [self.index(p) for p in self.blocks[k].parents]

    def independent(self) -> "ScenarioGraph":
        """Copy of this graph with every parent edge removed."""
        blocks = tuple(
            BlockDef(b.name, b.scale, b.shift, (), b.kind) for b in self.blocks
        )
        return ScenarioGraph(
            f"{self.name}_independent", blocks, self.actor, self.activation, self.heading_deg
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "actor": self.actor,
            "activation": self.activation,
            "heading_deg": self.heading_deg,
            "blocks": [
                {
                    "name": b.name,
                    "kind": b.kind,
                    "scale": b.scale,
                    "shift": b.shift,
                    "parents": list(b.parents),
                }
                for b in self.blocks
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioGraph":
        try:
            blocks = tuple(
                BlockDef(
                    name=str(b["name"]),
                    scale=float(b["scale"]),
                    shift=float(b["shift"]),
                    parents=tuple(b.get("parents", ())),
                    kind=b.get("kind", "continuous"),
                )
                for b in data["blocks"]
            )
            return cls(
                name=str(data["name"]),
                blocks=blocks,
                actor=data.get("actor", "cyclist"),
                activation=data.get("activation", "trigger"),
                heading_deg=float(data.get("heading_deg", 0.0)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed graph document: {exc}") from exc


def dump_graph(graph: ScenarioGraph, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(graph.to_dict(), sort_keys=False))


def load_graph(path: str | Path) -> ScenarioGraph:
    return ScenarioGraph.from_dict(yaml.safe_load(Path(path).read_text()))


# Position blocks for the vehicle presets span a wider lateral band than the
# cyclist preset so a crossing car can start outside the junction.
_VEHICLE_X = BlockDef("X", 100.0, 0.0)
_VEHICLE_Y = BlockDef("Y", 40.0, 0.0)

_PRESETS: dict[str, ScenarioGraph] = {
    "cyclist_crossing": ScenarioGraph(
        "cyclist_crossing",
        (
            BlockDef("X", 100.0, 0.0),
            BlockDef("Y", 18.0, 0.0),
            BlockDef("theta", 360.0, 180.0, ("X", "Y")),
            BlockDef("D", 40.0, 20.0, ("X", "Y", "theta")),
        ),
        actor="cyclist",
        activation="trigger",
    ),
    # crossing traffic from the ego's right
    "red_light_runner": ScenarioGraph(
        "red_light_runner",
        (_VEHICLE_X, _VEHICLE_Y, BlockDef("V", 14.0, 8.0, ("X", "Y"))),
        actor="vehicle",
        activation="immediate",
        heading_deg=90.0,
    ),
    # oncoming traffic
    "unprotected_left": ScenarioGraph(
        "unprotected_left",
        (_VEHICLE_X, _VEHICLE_Y, BlockDef("V", 14.0, 8.0, ("X", "Y"))),
        actor="vehicle",
        activation="immediate",
        heading_deg=180.0,
    ),
    # crossing traffic from the ego's left
    "signalized_right": ScenarioGraph(
        "signalized_right",
        (_VEHICLE_X, _VEHICLE_Y, BlockDef("V", 14.0, 8.0, ("X", "Y"))),
        actor="vehicle",
        activation="immediate",
        heading_deg=-90.0,
    ),
}


def preset_names() -> list[str]:
    return list(_PRESETS)


def build_preset(name: str) -> ScenarioGraph:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigError(
            f"unknown scenario preset {name!r}; choose from {', '.join(_PRESETS)}"
        ) from None


def rescale(a: float, block: BlockDef) -> float:
    """Map a raw range-fraction action to the block's physical value, clamped."""
    if not math.isfinite(a):
        raise NumericError(f"non-finite action {a!r} for block {block.name!r}")
    return min(max(a * block.scale + block.shift, block.low), block.high)


def to_raw(b: float, block: BlockDef) -> float:
    """Inverse of the unclamped part of :func:`rescale`."""
    return (b - block.shift) / block.scale


@dataclass(frozen=True)
class ScenarioSpec:
    raw_actions: tuple[float, ...]
    values: tuple[float, ...]
    log_prob: float = math.nan
    entropy: float = math.nan

    def __post_init__(self):
        if len(self.raw_actions) != len(self.values):
            raise ConfigError("raw_actions and values differ in length")
        object.__setattr__(self, "raw_actions", tuple(float(a) for a in self.raw_actions))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def from_values(cls, graph: ScenarioGraph, values: Sequence[float]) -> "ScenarioSpec":
        """Spec for physical values chosen outside any policy (baselines)."""
        if len(values) != len(graph):
            raise ConfigError(f"expected {len(graph)} values, got {len(values)}")
        clamped = [min(max(float(v), b.low), b.high) for v, b in zip(values, graph.blocks)]
        return cls(tuple(to_raw(v, b) for v, b in zip(clamped, graph.blocks)), tuple(clamped))

    def value(self, graph: ScenarioGraph, name: str) -> float:
        return self.values[graph.index(name)]

    def check(self, graph: ScenarioGraph) -> None:
        if len(self.values) != len(graph):
            raise ConfigError(
                f"spec has {len(self.values)} values but graph {graph.name!r} has {len(graph)} blocks"
            )
        for v, b in zip(self.values, graph.blocks):
            if not (b.low - 1e-9 <= v <= b.high + 1e-9):
                raise ConfigError(f"value {v} outside range of block {b.name!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "raw_actions": list(self.raw_actions),
            "values": list(self.values),
            "log_prob": self.log_prob,
            "entropy": self.entropy,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioSpec":
        return cls(
            tuple(data["raw_actions"]),
            tuple(data["values"]),
            float(data.get("log_prob", math.nan)),
            float(data.get("entropy", math.nan)),
        )


def _as_route(route) -> np.ndarray:
    pts = np.array(route, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ConfigError("a route needs at least 2 two-dimensional waypoints")
    if not np.all(np.isfinite(pts)):
        raise ConfigError("route contains non-finite coordinates")
    if np.any(np.linalg.norm(np.diff(pts, axis=0), axis=1) == 0):
        raise ConfigError("route has repeated consecutive waypoints")
    return pts


def route_frame(route) -> np.ndarray:
    """Express waypoints relative to the start pose (first segment along +x)."""
    pts = _as_route(route)
    d = pts[1] - pts[0]
    c, s = d / np.linalg.norm(d)
    rel = pts - pts[0]
    return np.column_stack((c * rel[:, 0] + s * rel[:, 1], -s * rel[:, 0] + c * rel[:, 1]))


def resample(route, count: int) -> np.ndarray:
    """``count`` points evenly spaced by arc length, endpoints included."""
    pts = _as_route(route)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    arc = np.concatenate(([0.0], np.cumsum(seg)))
    targets = np.linspace(0.0, arc[-1], count)
    return np.column_stack(
        (np.interp(targets, arc, pts[:, 0]), np.interp(targets, arc, pts[:, 1]))
    )


@dataclass(frozen=True, eq=False)
class EnvState:
    route: np.ndarray
    target_speed: float
    encoded: np.ndarray

    @property
    def speed_mps(self) -> float:
        return self.target_speed / 3.6


def encode_state(
    route,
    target_speed: float,
    n_waypoints: int = 10,
    position_scale: float = 100.0,
    speed_range: tuple[float, float] = SPEED_RANGE_KMH,
) -> EnvState:
    """Fixed-length encoding: resampled route-frame waypoints, then speed.

    Output is ``[x0, y0, x1, y1, ..., speed01]`` with coordinates divided by
    ``position_scale`` and the speed (km/h) mapped linearly onto [0, 1].
    """
    if n_waypoints < 2:
        raise ConfigError("n_waypoints must be >= 2")
    pts = _as_route(route)
    local = resample(route_frame(pts), n_waypoints) / position_scale
    lo, hi = speed_range
    speed01 = (float(target_speed) - lo) / (hi - lo)
    encoded = np.concatenate((local.ravel(), [speed01]))
    pts.setflags(write=False)
    encoded.setflags(write=False)
    return EnvState(pts, float(target_speed), encoded)
