"""Deterministic 2D micro-simulator.

The ego vehicle is a kinematic bicycle tracking the route with a PID
steering loop and a proportional speed loop. The generated obstacle sits at
its spawn pose until activated, then moves in a straight line at constant
speed. All geometry lives in the route-start frame (ego starts at the origin
heading along +x). Scalars use plain ``math``: one rollout is a few hundred
tiny steps and numpy call overhead would dominate.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from riskgen.errors import ConfigError
from riskgen.graph import EnvState, ScenarioGraph, ScenarioSpec, route_frame


class VehicleState(NamedTuple):
    x: float
    y: float
    heading: float  # radians, wrapped to (-pi, pi]
    speed: float  # m/s


class PIDState(NamedTuple):
    integral: float = 0.0
    prev_error: float | None = None
    segment: int = 0  # search hint for the nearest route segment


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    max_steps: int = 400
    ego_length: float = 4.5
    ego_width: float = 2.0
    cyclist_length: float = 1.8
    cyclist_width: float = 0.6
    vehicle_length: float = 4.5
    vehicle_width: float = 2.0
    wheelbase: float = 2.7
    lat_kp: float = 1.2
    lat_ki: float = 0.01
    lat_kd: float = 0.05
    lon_kp: float = 1.0
    max_steer_deg: float = 35.0
    max_accel: float = 3.0
    lookahead_min: float = 3.0
    lookahead_gain: float = 0.4  # seconds of travel
    cyclist_speed: float = 4.0
    goal_tolerance: float = 2.0
    occupancy_threshold: float = 3.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError("sim.dt must be > 0")
        if self.max_steps < 1:
            raise ConfigError("sim.max_steps must be >= 1")
        dims = (
            self.ego_length, self.ego_width, self.cyclist_length, self.cyclist_width,
            self.vehicle_length, self.vehicle_width, self.wheelbase,
        )
        if min(dims) <= 0:
            raise ConfigError("sim dimensions must be > 0")

    def obstacle_dims(self, actor: str) -> tuple[float, float]:
        if actor == "cyclist":
            return self.cyclist_length, self.cyclist_width
        return self.vehicle_length, self.vehicle_width


@dataclass(frozen=True)
class RewardConfig:
    collision_bonus: float = 10.0
    occupancy_penalty: float = 20.0


@dataclass
class RolloutResult:
    trace: list[tuple[VehicleState, VehicleState]]
    min_separation: float
    collision: bool
    route_occupied: bool
    steps_executed: int


def wrap_angle(a: float) -> float:
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


class Track:
    """Route polyline with precomputed segment data for fast projection."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or len(pts) < 2:
            raise ConfigError("a route needs at least 2 waypoints")
        self.xs = pts[:, 0].tolist()
        self.ys = pts[:, 1].tolist()
        n = len(self.xs) - 1
        self.seg_dx = [self.xs[i + 1] - self.xs[i] for i in range(n)]
        self.seg_dy = [self.ys[i + 1] - self.ys[i] for i in range(n)]
        self.seg_len = [math.hypot(dx, dy) for dx, dy in zip(self.seg_dx, self.seg_dy)]
        self.arc = [0.0]
        for length in self.seg_len:
            self.arc.append(self.arc[-1] + length)

    @property
    def length(self) -> float:
        return self.arc[-1]

    def project(self, x: float, y: float, hint: int = 0, window: int = 40):
        """Nearest point on segments ``[hint-2, hint+window)``.

        Returns ``(segment, arc_position, signed_offset)``; the offset is
        positive when the point lies left of the route.
        """
        n = len(self.seg_len)
        best = (math.inf, 0, 0.0, 0.0)
        for i in range(max(0, hint - 2), min(n, hint + window)):
            dx, dy, length = self.seg_dx[i], self.seg_dy[i], self.seg_len[i]
            px, py = x - self.xs[i], y - self.ys[i]
            t = min(max((px * dx + py * dy) / (length * length), 0.0), 1.0)
            ex, ey = px - t * dx, py - t * dy
            d2 = ex * ex + ey * ey
            if d2 < best[0]:
                best = (d2, i, t, (dx * py - dy * px) / length)
        _, seg, t, offset = best
        return seg, self.arc[seg] + t * self.seg_len[seg], offset

    def point_at(self, s: float) -> tuple[float, float]:
        """Point at arc length ``s``; extrapolates linearly past either end."""
        n = len(self.seg_len)
        if s <= 0.0:
            i = 0
        elif s >= self.arc[-1]:
            i = n - 1
        else:
            lo, hi = 0, n
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if self.arc[mid] <= s:
                    lo = mid
                else:
                    hi = mid
            i = lo
        t = (s - self.arc[i]) / self.seg_len[i]
        return self.xs[i] + t * self.seg_dx[i], self.ys[i] + t * self.seg_dy[i]


def step_ego(
    state: VehicleState,
    route: Track,
    target_speed: float,
    pid: PIDState,
    config: SimConfig,
) -> tuple[VehicleState, PIDState]:
    """Advance the ego one tick. ``target_speed`` is in m/s.

    The steering error is the bearing of a lookahead point on the route
    relative to the ego heading, which folds heading error and cross-track
    offset into a single signal for the PID loop.
    """
    if not isinstance(route, Track):
        route = Track(route)
    seg, s, _ = route.project(state.x, state.y, pid.segment)
    lookahead = max(config.lookahead_min, config.lookahead_gain * state.speed)
    lx, ly = route.point_at(s + lookahead)
    error = wrap_angle(math.atan2(ly - state.y, lx - state.x) - state.heading)

    integral = pid.integral + error * config.dt
    deriv = 0.0 if pid.prev_error is None else (error - pid.prev_error) / config.dt
    max_steer = math.radians(config.max_steer_deg)
    steer = config.lat_kp * error + config.lat_ki * integral + config.lat_kd * deriv
    steer = min(max(steer, -max_steer), max_steer)
    accel = config.lon_kp * (target_speed - state.speed)
    accel = min(max(accel, -config.max_accel), config.max_accel)

    v, dt = state.speed, config.dt
    new = VehicleState(
        state.x + v * math.cos(state.heading) * dt,
        state.y + v * math.sin(state.heading) * dt,
        wrap_angle(state.heading + v / config.wheelbase * math.tan(steer) * dt),
        max(0.0, v + accel * dt),
    )
    return new, PIDState(integral, error, seg)


def step_obstacle(state: VehicleState, activated: bool, config: SimConfig) -> VehicleState:
    """Constant-velocity motion once activated; ``state.speed`` is the cruise speed."""
    if not activated:
        return state
    dt = config.dt
    return state._replace(
        x=state.x + state.speed * math.cos(state.heading) * dt,
        y=state.y + state.speed * math.sin(state.heading) * dt,
    )


def check_collision(
    a: VehicleState, dims_a: tuple[float, float], b: VehicleState, dims_b: tuple[float, float]
) -> bool:
    """Oriented-rectangle overlap by the separating-axis test.

    ``dims`` are ``(length, width)``; length runs along the heading.
    Touching rectangles count as colliding.
    """
    dx, dy = b.x - a.x, b.y - a.y
    la, wa = dims_a[0] / 2, dims_a[1] / 2
    lb, wb = dims_b[0] / 2, dims_b[1] / 2
    if dx * dx + dy * dy > (math.hypot(la, wa) + math.hypot(lb, wb)) ** 2:
        return False
    ca, sa = math.cos(a.heading), math.sin(a.heading)
    cb, sb = math.cos(b.heading), math.sin(b.heading)
    # candidate axes: both rectangles' length and width directions
    for ux, uy in ((ca, sa), (-sa, ca), (cb, sb), (-sb, cb)):
        ra = la * abs(ca * ux + sa * uy) + wa * abs(-sa * ux + ca * uy)
        rb = lb * abs(cb * ux + sb * uy) + wb * abs(-sb * ux + cb * uy)
        if abs(dx * ux + dy * uy) > ra + rb:
            return False
    return True


def route_occupied(route_local, x: float, y: float, threshold: float) -> bool:
    pts = np.asarray(route_local, dtype=float)
    return bool(np.min(np.hypot(pts[:, 0] - x, pts[:, 1] - y)) < threshold)


def spawn_obstacle(spec: ScenarioSpec, graph: ScenarioGraph, config: SimConfig):
    """Initial obstacle state and trigger distance (``None`` = move at once)."""
    names = graph.names
    values = dict(zip(names, spec.values))
    heading = math.radians(values["theta"]) if "theta" in values else math.radians(graph.heading_deg)
    if "V" in values:
        speed = values["V"]
    else:
        speed = config.cyclist_speed if graph.actor == "cyclist" else 0.0
    obstacle = VehicleState(values.get("X", 0.0), values.get("Y", 0.0), wrap_angle(heading), speed)
    trigger = values["D"] if graph.activation == "trigger" else None
    return obstacle, trigger


def simulate(
    spec: ScenarioSpec,
    state: EnvState,
    graph: ScenarioGraph,
    config: SimConfig = SimConfig(),
    record_trace: bool = True,
) -> RolloutResult:
    if len(spec.values) != len(graph):
        raise ConfigError(
            f"spec has {len(spec.values)} values but graph {graph.name!r} has {len(graph)} blocks"
        )
    local = route_frame(state.route)
    track = Track(local)
    goal_x, goal_y = track.xs[-1], track.ys[-1]
    ego_dims = (config.ego_length, config.ego_width)
    obs_dims = config.obstacle_dims(graph.actor)
    target = state.speed_mps

    obstacle, trigger = spawn_obstacle(spec, graph, config)
    occupied = route_occupied(local, obstacle.x, obstacle.y, config.occupancy_threshold)
    activated = trigger is None
    ego = VehicleState(0.0, 0.0, 0.0, target)
    pid = PIDState()

    sep = math.hypot(ego.x - obstacle.x, ego.y - obstacle.y)
    min_sep = sep
    collision = check_collision(ego, ego_dims, obstacle, obs_dims)
    trace = [(ego, obstacle)] if record_trace else []
    steps = 0
    while not collision and steps < config.max_steps:
        if math.hypot(ego.x - goal_x, ego.y - goal_y) <= config.goal_tolerance:
            break
        if not activated and sep <= trigger:
            activated = True
        obstacle = step_obstacle(obstacle, activated, config)
        ego, pid = step_ego(ego, track, target, pid, config)
        steps += 1
        sep = math.hypot(ego.x - obstacle.x, ego.y - obstacle.y)
        min_sep = min(min_sep, sep)
        collision = check_collision(ego, ego_dims, obstacle, obs_dims)
        if record_trace:
            trace.append((ego, obstacle))
    return RolloutResult(trace, min_sep, collision, occupied, steps)


def reward_terms(rollout: RolloutResult, config: RewardConfig = RewardConfig()):
    """``(distance, collision_bonus, occupancy_penalty)``, each nonnegative."""
    bonus = config.collision_bonus if rollout.collision else 0.0
    penalty = config.occupancy_penalty if rollout.route_occupied else 0.0
    return rollout.min_separation, bonus, penalty


def compute_reward(rollout: RolloutResult, config: RewardConfig = RewardConfig()) -> float:
    distance, bonus, penalty = reward_terms(rollout, config)
    return -distance + bonus - penalty


def write_trace(
    rollout: RolloutResult,
    path: str | Path,
    graph: ScenarioGraph,
    state: EnvState,
    spec: ScenarioSpec,
    config: SimConfig = SimConfig(),
) -> None:
    """JSON-lines trace: one header record, then one record per step."""
    header = {
        "type": "header",
        "graph": graph.to_dict(),
        "route": route_frame(state.route).tolist(),
        "target_speed": state.target_speed,
        "spec": spec.to_dict(),
        "ego_dims": [config.ego_length, config.ego_width],
        "obstacle_dims": list(config.obstacle_dims(graph.actor)),
        "min_separation": rollout.min_separation,
        "collision": rollout.collision,
        "route_occupied": rollout.route_occupied,
        "steps_executed": rollout.steps_executed,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for i, (ego, obs) in enumerate(rollout.trace):
            fh.write(json.dumps({"step": i, "ego": ego._asdict(), "obstacle": obs._asdict()}) + "\n")


def read_trace(path: str | Path) -> tuple[dict, list[tuple[VehicleState, VehicleState]]]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ConfigError(f"empty trace file {path}")
    try:
        header = json.loads(lines[0])
        if header.get("type") != "header":
            raise ConfigError(f"{path}: first record is not a trace header")
        steps = [json.loads(line) for line in lines[1:] if line.strip()]
        trace = [(VehicleState(**r["ego"]), VehicleState(**r["obstacle"])) for r in steps]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed trace ({exc})") from exc
    return header, trace

