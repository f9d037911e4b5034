"""World model: lanelet network, obstacles, ego configuration, JSON round-trip.

A scenario is a single self-describing JSON document (see README for the
schema). Everything is immutable after load; dynamic obstacles replay
pre-recorded state lists while only the ego replans.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import shapely
from shapely.geometry import Point, Polygon
from shapely.geometry.polygon import orient

from .errors import ScenarioError
from .geometry import CurvilinearFrame, PolygonSet, disc, oriented_rectangle, ring_edges

DEFAULT_DT = 0.1  # [s]
DYNAMIC_KINDS = ("car", "truck", "bicycle", "pedestrian")


@dataclass(frozen=True)
class RectShape:
    """Rectangular footprint, length along the heading axis."""

    length: float
    width: float

    @property
    def area(self) -> float:
        return self.length * self.width

    @property
    def enclosing_radius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def polygon_at(self, x: float, y: float, theta: float) -> Polygon:
        return oriented_rectangle(x, y, theta, self.length, self.width)


@dataclass(frozen=True)
class DiscShape:
    radius: float

    @property
    def area(self) -> float:
        return math.pi * self.radius**2

    @property
    def enclosing_radius(self) -> float:
        return self.radius

    def polygon_at(self, x: float, y: float, theta: float) -> Polygon:
        return disc(x, y, self.radius)


class Lanelet:
    """Atomic drivable segment between a left and a right boundary polyline."""

    def __init__(
        self,
        lanelet_id: int,
        left_boundary,
        right_boundary,
        successor_ids=(),
        adjacent_left_id: Optional[int] = None,
        adjacent_right_id: Optional[int] = None,
        speed_limit: Optional[float] = None,
    ):
        left = np.asarray(left_boundary, dtype=float)
        right = np.asarray(right_boundary, dtype=float)
        if left.ndim != 2 or left.shape[1] != 2 or len(left) < 2:
            raise ScenarioError(f"lanelet {lanelet_id}: left boundary needs >= 2 2-D points")
        if left.shape != right.shape:
            raise ScenarioError(f"lanelet {lanelet_id}: boundary point counts differ")
        self.id = int(lanelet_id)
        self.left_boundary = left
        self.right_boundary = right
        self.successor_ids = tuple(int(i) for i in successor_ids)
        self.adjacent_left_id = adjacent_left_id
        self.adjacent_right_id = adjacent_right_id
        self.speed_limit = None if speed_limit is None else float(speed_limit)

        ring = np.concatenate([left, right[::-1]], axis=0)
        poly = Polygon(ring)
        if not poly.is_valid or poly.area <= 0:
            raise ScenarioError(f"lanelet {lanelet_id}: boundary quad strip is not a simple polygon")
        self.polygon = orient(poly)
        self.centerline = 0.5 * (left + right)

    def direction_at(self, x: float, y: float) -> float:
        """Heading of the centerline at the projection of (x, y)."""
        frame = self._center_frame()
        s, _ = frame.to_curvilinear(x, y)
        return frame.heading_at(s)

    def _center_frame(self) -> CurvilinearFrame:
        if not hasattr(self, "_frame"):
            self._frame = CurvilinearFrame(self.centerline, projection_halfwidth=1e9)
        return self._frame


class LaneletNetwork:
    def __init__(self, lanelets):
        self.lanelets = {l.id: l for l in lanelets}
        if len(self.lanelets) != len(lanelets):
            raise ScenarioError("duplicate lanelet ids")
        for l in lanelets:
            for sid in l.successor_ids:
                if sid not in self.lanelets:
                    raise ScenarioError(f"lanelet {l.id}: successor {sid} does not resolve")
        union = shapely.union_all([l.polygon for l in lanelets]) if lanelets else Polygon()
        self.drivable_area = PolygonSet.from_geometry(union)
        # outer edges of the drivable area double as opaque walls for the sensor
        self.wall_edges = ring_edges(self.drivable_area.geometry())

    def __iter__(self):
        return iter(self.lanelets.values())

    def get(self, lanelet_id: int) -> Lanelet:
        if lanelet_id not in self.lanelets:
            raise ScenarioError(f"unknown lanelet id {lanelet_id}")
        return self.lanelets[lanelet_id]

    def lanelets_containing(self, x: float, y: float) -> list[Lanelet]:
        p = Point(x, y)
        return [l for l in self.lanelets.values() if shapely.intersects(l.polygon, p)]

    def speed_limit_at(self, x: float, y: float) -> Optional[float]:
        limits = [l.speed_limit for l in self.lanelets_containing(x, y) if l.speed_limit is not None]
        return min(limits) if limits else None


class StaticObstacle:
    def __init__(self, obstacle_id: int, footprint):
        self.id = int(obstacle_id)
        poly = Polygon(np.asarray(footprint, dtype=float))
        if not poly.is_valid or poly.area <= 0:
            raise ScenarioError(f"static obstacle {obstacle_id}: footprint is not a simple polygon")
        self.footprint = orient(poly)


class DynamicObstacle:
    """Obstacle replaying a pre-recorded state list at the scenario dt."""

    def __init__(self, obstacle_id: int, kind: str, shape, states, dt: float):
        if kind not in DYNAMIC_KINDS:
            raise ScenarioError(f"dynamic obstacle {obstacle_id}: unknown kind {kind!r}")
        self.id = int(obstacle_id)
        self.kind = kind
        self.shape = shape
        st = [(float(s["t"]), float(s["x"]), float(s["y"]), float(s["theta"]), float(s["v"])) for s in states]
        if not st:
            raise ScenarioError(f"dynamic obstacle {obstacle_id}: empty state list")
        arr = np.asarray(st, dtype=float)
        for i, t in enumerate(arr[:, 0]):
            if abs(t - i * dt) > 1e-9:
                raise ScenarioError(
                    f"dynamic obstacle {obstacle_id}: state {i} at t={t}, expected contiguous t={i * dt}"
                )
        self.t = arr[:, 0]
        self.x = arr[:, 1]
        self.y = arr[:, 2]
        self.theta = arr[:, 3]
        self.v = arr[:, 4]

    def __len__(self):
        return len(self.t)

    def state_at(self, k: int, clamp: bool = False):
        """(x, y, theta, v) at timestep k; clamp=True holds the last recorded pose."""
        if clamp:
            k = min(max(k, 0), len(self.t) - 1)
        elif k < 0 or k >= len(self.t):
            raise ScenarioError(f"dynamic obstacle {self.id}: timestep {k} outside state range")
        return float(self.x[k]), float(self.y[k]), float(self.theta[k]), float(self.v[k])


def obstacle_footprint(obstacle: DynamicObstacle, k: int) -> Polygon:
    """Footprint polygon of a dynamic obstacle at timestep k (strict range check)."""
    x, y, theta, _ = obstacle.state_at(k)
    return obstacle.shape.polygon_at(x, y, theta)


@dataclass(frozen=True)
class EgoState:
    x: float
    y: float
    s: float
    d: float
    theta: float
    v: float


@dataclass(frozen=True)
class EgoParams:
    length: float
    width: float
    wheelbase: float
    sensor_range: float
    a_max: float  # max braking deceleration, positive [m/s^2]
    v_max: float

    def __post_init__(self):
        for name in ("length", "width", "wheelbase", "sensor_range", "a_max", "v_max"):
            if getattr(self, name) <= 0:
                raise ScenarioError(f"ego params: {name} must be strictly positive")
        if self.wheelbase >= self.length:
            raise ScenarioError("ego params: wheelbase must be smaller than length")

    def footprint_at(self, x: float, y: float, theta: float) -> Polygon:
        return oriented_rectangle(x, y, theta, self.length, self.width)


class Scenario:
    def __init__(
        self,
        name: str,
        network: LaneletNetwork,
        static_obstacles,
        dynamic_obstacles,
        ego_initial: EgoState,
        ego_params: EgoParams,
        reference_path,
        dt: float,
        horizon_steps: int,
        goal_s: float,
    ):
        if dt <= 0:
            raise ScenarioError("dt must be positive")
        if horizon_steps < 2:
            raise ScenarioError("horizon_steps must be at least 2")
        self.name = name
        self.network = network
        self.static_obstacles = list(static_obstacles)
        self.dynamic_obstacles = list(dynamic_obstacles)
        ids = [o.id for o in self.static_obstacles] + [o.id for o in self.dynamic_obstacles]
        if len(ids) != len(set(ids)):
            raise ScenarioError("obstacle ids must be unique across static and dynamic lists")
        self.ego_params = ego_params
        self.reference_path = np.asarray(reference_path, dtype=float)
        self.frame = CurvilinearFrame(self.reference_path)
        self.dt = float(dt)
        self.horizon_steps = int(horizon_steps)
        self.goal_s = float(goal_s)
        self.ego_initial = ego_initial
        if not network.drivable_area.contains_point(ego_initial.x, ego_initial.y):
            raise ScenarioError("ego initial position lies outside the drivable area")

    def dynamic_obstacle(self, obstacle_id: int) -> DynamicObstacle:
        for o in self.dynamic_obstacles:
            if o.id == obstacle_id:
                return o
        raise ScenarioError(f"unknown dynamic obstacle id {obstacle_id}")


def _require(mapping, key, ctx):
    if key not in mapping:
        raise ScenarioError(f"{ctx}: missing field {key!r}")
    return mapping[key]


def _parse_shape(data, ctx):
    if "radius" in data:
        return DiscShape(radius=float(data["radius"]))
    if "length" in data and "width" in data:
        return RectShape(length=float(data["length"]), width=float(data["width"]))
    raise ScenarioError(f"{ctx}: shape needs either radius or length+width")


def scenario_from_dict(data: dict, source: str = "<dict>") -> Scenario:
    meta = _require(data, "meta", source)
    name = str(meta.get("name", "unnamed"))
    dt = float(meta.get("dt", DEFAULT_DT))
    horizon_steps = int(_require(meta, "horizon_steps", f"{source}:meta"))

    lanelets = []
    for i, ld in enumerate(_require(data, "lanelets", source)):
        ctx = f"{source}:lanelets[{i}]"
        lanelets.append(
            Lanelet(
                _require(ld, "id", ctx),
                _require(ld, "left", ctx),
                _require(ld, "right", ctx),
                ld.get("successors", ()),
                ld.get("adj_left"),
                ld.get("adj_right"),
                ld.get("speed_limit"),
            )
        )
    network = LaneletNetwork(lanelets)

    statics = []
    for i, sd in enumerate(data.get("static_obstacles", [])):
        ctx = f"{source}:static_obstacles[{i}]"
        statics.append(StaticObstacle(_require(sd, "id", ctx), _require(sd, "polygon", ctx)))

    dynamics = []
    for i, dd in enumerate(data.get("dynamic_obstacles", [])):
        ctx = f"{source}:dynamic_obstacles[{i}]"
        dynamics.append(
            DynamicObstacle(
                _require(dd, "id", ctx),
                _require(dd, "kind", ctx),
                _parse_shape(_require(dd, "shape", ctx), ctx),
                _require(dd, "states", ctx),
                dt,
            )
        )

    ego = _require(data, "ego", source)
    init = _require(ego, "initial", f"{source}:ego")
    pd = _require(ego, "params", f"{source}:ego")
    params = EgoParams(
        length=float(_require(pd, "length", f"{source}:ego.params")),
        width=float(_require(pd, "width", f"{source}:ego.params")),
        wheelbase=float(_require(pd, "wheelbase", f"{source}:ego.params")),
        sensor_range=float(_require(pd, "sensor_range", f"{source}:ego.params")),
        a_max=float(_require(pd, "a_max", f"{source}:ego.params")),
        v_max=float(_require(pd, "v_max", f"{source}:ego.params")),
    )
    ref_path = np.asarray(_require(ego, "reference_path", f"{source}:ego"), dtype=float)
    frame = CurvilinearFrame(ref_path)
    x0 = float(_require(init, "x", f"{source}:ego.initial"))
    y0 = float(_require(init, "y", f"{source}:ego.initial"))
    s0, d0 = frame.to_curvilinear(x0, y0)
    ego_state = EgoState(
        x=x0,
        y=y0,
        s=s0,
        d=d0,
        theta=float(_require(init, "theta", f"{source}:ego.initial")),
        v=float(_require(init, "v", f"{source}:ego.initial")),
    )

    return Scenario(
        name=name,
        network=network,
        static_obstacles=statics,
        dynamic_obstacles=dynamics,
        ego_initial=ego_state,
        ego_params=params,
        reference_path=ref_path,
        dt=dt,
        horizon_steps=horizon_steps,
        goal_s=float(_require(ego, "goal_s", f"{source}:ego")),
    )


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    return scenario_from_dict(data, source=str(path))


def scenario_to_dict(sc: Scenario) -> dict:
    """Inverse of scenario_from_dict, suitable for JSON round-trips."""
    lanelets = []
    for l in sc.network:
        lanelets.append(
            {
                "id": l.id,
                "left": l.left_boundary.tolist(),
                "right": l.right_boundary.tolist(),
                "successors": list(l.successor_ids),
                "adj_left": l.adjacent_left_id,
                "adj_right": l.adjacent_right_id,
                "speed_limit": l.speed_limit,
            }
        )
    statics = [
        {"id": o.id, "polygon": [list(xy) for xy in np.asarray(o.footprint.exterior.coords)[:-1]]}
        for o in sc.static_obstacles
    ]
    dynamics = []
    for o in sc.dynamic_obstacles:
        shape = (
            {"radius": o.shape.radius}
            if isinstance(o.shape, DiscShape)
            else {"length": o.shape.length, "width": o.shape.width}
        )
        states = [
            {"t": float(o.t[k]), "x": float(o.x[k]), "y": float(o.y[k]), "theta": float(o.theta[k]), "v": float(o.v[k])}
            for k in range(len(o))
        ]
        dynamics.append({"id": o.id, "kind": o.kind, "shape": shape, "states": states})
    return {
        "meta": {"name": sc.name, "dt": sc.dt, "horizon_steps": sc.horizon_steps},
        "lanelets": lanelets,
        "static_obstacles": statics,
        "dynamic_obstacles": dynamics,
        "ego": {
            "initial": {
                "x": sc.ego_initial.x,
                "y": sc.ego_initial.y,
                "theta": sc.ego_initial.theta,
                "v": sc.ego_initial.v,
            },
            "params": {
                "length": sc.ego_params.length,
                "width": sc.ego_params.width,
                "wheelbase": sc.ego_params.wheelbase,
                "sensor_range": sc.ego_params.sensor_range,
                "a_max": sc.ego_params.a_max,
                "v_max": sc.ego_params.v_max,
            },
            "reference_path": sc.reference_path.tolist(),
            "goal_s": sc.goal_s,
        },
    }
