"""Intersection-style routes used for training and evaluation.

Every route starts at the origin heading along +x, runs straight up to the
junction, optionally turns through a circular arc and leaves the junction on
a straight exit. Waypoints are spaced roughly 1 m apart.
"""
from __future__ import annotations

import math

import numpy as np

from riskgen.errors import ConfigError

TURNS = ("straight", "left", "right")


def intersection_route(
    approach: float = 30.0,
    turn: str = "straight",
    radius: float = 10.0,
    exit_length: float = 25.0,
    spacing: float = 1.0,
) -> np.ndarray:
    if turn not in TURNS:
        raise ConfigError(f"unknown turn {turn!r}; choose from {TURNS}")
    if min(approach, radius, exit_length, spacing) <= 0:
        raise ConfigError("route lengths must be positive")

    n = max(2, int(round(approach / spacing)) + 1)
    pts = [np.column_stack((np.linspace(0.0, approach, n), np.zeros(n)))]
    if turn == "straight":
        total = 2 * radius + exit_length
        m = max(1, int(round(total / spacing)))
        xs = approach + np.linspace(0.0, total, m + 1)[1:]
        pts.append(np.column_stack((xs, np.zeros(m))))
        return np.vstack(pts)

    side = 1.0 if turn == "left" else -1.0
    m = max(2, int(math.ceil(0.5 * math.pi * radius / spacing)))
    phi = np.linspace(0.0, 0.5 * math.pi, m + 1)[1:]
    arc = np.column_stack(
        (approach + radius * np.sin(phi), side * radius * (1.0 - np.cos(phi)))
    )
    k = max(1, int(round(exit_length / spacing)))
    ys = side * (radius + np.linspace(0.0, exit_length, k + 1)[1:])
    exit_pts = np.column_stack((np.full(k, approach + radius), ys))
    return np.vstack(pts + [arc, exit_pts])


def training_routes() -> list[np.ndarray]:
    """Ten routes mixing approach lengths, turn directions and radii."""
    return [
        intersection_route(25.0, "straight"),
        intersection_route(35.0, "straight"),
        intersection_route(20.0, "left", 12.0),
        intersection_route(30.0, "left", 10.0),
        intersection_route(40.0, "left", 14.0),
        intersection_route(20.0, "right", 8.0),
        intersection_route(30.0, "right", 7.0),
        intersection_route(40.0, "right", 9.0),
        intersection_route(28.0, "left", 9.0),
        intersection_route(33.0, "right", 10.0),
    ]


def heldout_routes() -> dict[str, np.ndarray]:
    """Routes never used in training."""
    return {
        "left": intersection_route(26.0, "left", 11.0),
        "right": intersection_route(26.0, "right", 8.5),
        "straight": intersection_route(30.0, "straight", exit_length=30.0),
        "long_left": intersection_route(38.0, "left", 13.0),
    }
