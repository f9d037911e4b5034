"""Phantom agents: worst-case hypothetical road users placed at spawn points.

Pedestrians walk a straight line toward the ego's reference path. Bicycles
and vehicles follow lanelet routes (successor chains) at constant speed with
constant lateral offset. All predictions share the planning horizon and
timestep so the metrics layer can compare states index by index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .geometry import CurvilinearFrame
from .scenario import DiscShape, RectShape, Scenario
from .spawn import SpawnPoint

PHANTOM_KINDS = ("pedestrian", "bicycle", "vehicle")

WALKING_SPEED = 1.4  # [m/s]
CYCLING_SPEED = 5.0  # [m/s]
VEHICLE_SPEED_CAP = 8.33  # [m/s], 30 km/h worst case in occluded space

PEDESTRIAN_SHAPE = DiscShape(radius=0.35)
BICYCLE_SHAPE = RectShape(length=1.8, width=0.6)
VEHICLE_SHAPE = RectShape(length=4.5, width=2.0)

_SHAPES = {"pedestrian": PEDESTRIAN_SHAPE, "bicycle": BICYCLE_SHAPE, "vehicle": VEHICLE_SHAPE}

# maximum number of lanelets in a phantom route
ROUTE_DEPTH = 3


@dataclass(frozen=True)
class PhantomPrediction:
    agent_id: str
    kind: str
    shape: object
    states: np.ndarray  # (horizon, 3): x, y, theta
    speed: float
    route: tuple  # lanelet ids, () for pedestrians

    def footprint(self, k: int):
        x, y, theta = self.states[k]
        return self.shape.polygon_at(float(x), float(y), float(theta))


def find_possible_routes(network, start_lanelet_id: int, depth: int = ROUTE_DEPTH) -> list:
    """Successor chains starting at a lanelet, at most depth lanelets long.

    A chain stops early when a lanelet has no successors, so a dead end
    yields the single route (start,).
    """
    start = network.get(start_lanelet_id)
    routes = []

    def walk(chain, lane):
        succ = [network.get(i) for i in lane.successor_ids]
        if len(chain) >= depth or not succ:
            routes.append(tuple(l.id for l in chain))
            return
        for nxt in succ:
            walk(chain + [nxt], nxt)

    walk([start], start)
    return sorted(routes)


def _route_frame(network, route) -> CurvilinearFrame:
    pts = []
    for lid in route:
        cl = network.get(lid).centerline
        if pts and np.hypot(*(cl[0] - pts[-1])) < 1e-9:
            cl = cl[1:]
        pts.extend(cl)
    return CurvilinearFrame(np.asarray(pts), projection_halfwidth=1e9)


def _route_pose(frame: CurvilinearFrame, s: float, d: float):
    """Pose on a route frame; past the end, extrapolate along the final tangent."""
    if s <= frame.length:
        x, y = frame.from_curvilinear(s, d)
        theta = frame.heading_at(min(s, frame.length))
        return x, y, theta
    ex, ey = frame.from_curvilinear(frame.length, d)
    theta = frame.heading_at(frame.length)
    over = s - frame.length
    return ex + over * math.cos(theta), ey + over * math.sin(theta), theta


def _predict_pedestrian(scenario: Scenario, sp: SpawnPoint, horizon: int, dt: float, speed: float):
    try:
        _, d = scenario.frame.to_curvilinear(sp.x, sp.y)
        s_proj, _ = scenario.frame.to_curvilinear(sp.x, sp.y)
    except GeometryError:
        return []
    nx, ny = scenario.frame.normal_at(s_proj)
    sign = -1.0 if d > 0 else 1.0  # walk toward the reference path
    theta = math.atan2(sign * ny, sign * nx)
    steps = np.arange(horizon)[:, None] * speed * dt
    xy = np.asarray([sp.x, sp.y]) + steps * np.asarray([math.cos(theta), math.sin(theta)])
    states = np.c_[xy, np.full(horizon, theta)]
    return [("pedestrian", PEDESTRIAN_SHAPE, states, speed, ())]


def _predict_lane_bound(scenario: Scenario, sp: SpawnPoint, kind: str, horizon: int, dt: float, base_speed: float):
    network = scenario.network
    lanes = network.lanelets_containing(sp.x, sp.y)
    if not lanes:
        return []
    route_set = []
    for lane in sorted(lanes, key=lambda l: l.id):
        for route in find_possible_routes(network, lane.id):
            if route not in route_set:
                route_set.append(route)
    out = []
    for route in route_set:
        if kind == "vehicle":
            limit = network.get(route[0]).speed_limit
            speed = base_speed if limit is None else min(limit, base_speed)
        else:
            speed = base_speed
        frame = _route_frame(network, route)
        try:
            s0, d0 = frame.to_curvilinear(sp.x, sp.y)
        except GeometryError:
            continue
        needed = speed * (horizon - 1) * dt
        terminal = not network.get(route[-1]).successor_ids
        if frame.length - s0 < needed and not terminal:
            continue  # the agent would outrun a route that continues elsewhere
        states = np.empty((horizon, 3))
        for k in range(horizon):
            states[k] = _route_pose(frame, s0 + speed * k * dt, d0)
        out.append((kind, _SHAPES[kind], states, speed, route))
    return out


_BASE_SPEEDS = {
    "pedestrian": WALKING_SPEED,
    "bicycle": CYCLING_SPEED,
    "vehicle": VEHICLE_SPEED_CAP,
}


def predict_agent(scenario: Scenario, sp: SpawnPoint, kind: str, horizon: int, dt: float, speeds=None) -> list:
    """Predictions for one admissible kind at one spawn point (ids unassigned).

    `speeds` optionally overrides the assumed speed per kind; for vehicles it
    replaces the cap that the lanelet limit is clipped against.
    """
    if kind not in PHANTOM_KINDS:
        raise GeometryError(f"unknown phantom kind {kind!r}")
    base = _BASE_SPEEDS[kind] if not speeds else speeds.get(kind, _BASE_SPEEDS[kind])
    if kind == "pedestrian":
        raw = _predict_pedestrian(scenario, sp, horizon, dt, base)
    else:
        raw = _predict_lane_bound(scenario, sp, kind, horizon, dt, base)
    return raw


def predict_agents(scenario: Scenario, spawn_points, horizon: int, dt: float, speeds=None) -> list:
    """All phantom predictions for a spawn set, deterministically id-tagged."""
    preds = []
    for i, sp in enumerate(spawn_points):
        for kind in sp.kinds:
            for j, (k_, shape, states, speed, route) in enumerate(
                predict_agent(scenario, sp, kind, horizon, dt, speeds)
            ):
                agent_id = f"{sp.cause[0]}{i}-{k_}-{j}"
                preds.append(
                    PhantomPrediction(
                        agent_id=agent_id, kind=k_, shape=shape, states=states, speed=speed, route=tuple(route)
                    )
                )
    return preds
