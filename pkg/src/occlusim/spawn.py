"""Phantom spawn points: where an unseen agent could plausibly emerge.

Three generators feed one aggregate:

* static cause: behind each nearby visible static obstacle, on the visibility
  boundary at the obstacle's longitudinal extent (a pedestrian stepping out),
* lane cause: where the ego's reference path itself enters occluded space
  (someone could be standing on the road just past the corner),
* dynamic cause: inside the shadow of a nearby visible moving obstacle, if a
  small vehicle footprint fits there (an overtaken or masked rider).

Every candidate must lie on the lanelet network, inside the occluded area,
and clear of all visible obstacle footprints; failures are dropped silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import LineString, Point

from .errors import GeometryError
from .geometry import PolygonSet, boolean, disc, oriented_rectangle
from .scenario import Scenario
from .sensor import VisibilitySnapshot

# static spawn points only matter near the ego [m]
STATIC_CAUSE_RANGE = 30.0
# dynamic-cause obstacles are considered within this arc distance [m]
DYNAMIC_CAUSE_RANGE = 40.0
# longitudinal margin around a static obstacle's extent [m]
_EXTENT_MARGIN = 0.5
# how far a candidate is nudged off the visibility boundary [m]
_NUDGE = 5e-4
# membership tolerance for the occluded-area clause [m]
OCCLUSION_TOL = 1e-3
# same-cause candidates closer than this collapse into one [m]
_DEDUP_RADIUS = 1.0
# probe footprints per cause
PEDESTRIAN_RADIUS = 0.35
_DYNAMIC_PROBE = (2.0, 1.0)  # length, width


@dataclass(frozen=True)
class SpawnPoint:
    x: float
    y: float
    cause: str  # "static" | "lane" | "dynamic"
    cause_obstacle_id: object  # None for lane cause
    kinds: tuple


def _probe_polygon(cause, x, y, heading):
    if cause == "dynamic":
        return oriented_rectangle(x, y, heading, *_DYNAMIC_PROBE)
    return disc(x, y, PEDESTRIAN_RADIUS)


def _candidate_valid(scenario, snapshot, x, y, probe) -> bool:
    if not scenario.network.drivable_area.contains_point(x, y):
        return False
    occ = snapshot.occluded
    if occ.is_empty:
        return False
    p = Point(x, y)
    if not occ.geometry().covers(p) and occ.geometry().distance(p) > OCCLUSION_TOL:
        return False
    for oid in snapshot.visible_obstacle_ids:
        fp = snapshot.obstacle_footprints[oid]
        if shapely.intersects(probe, fp) and shapely.intersection(probe, fp).area > 1e-12:
            return False
    return True


def _occluded_component_index(snapshot, x, y) -> int:
    p = Point(x, y)
    best = -1
    best_d = math.inf
    for i, poly in enumerate(snapshot.occluded):
        if poly.covers(p):
            return i
        d = poly.distance(p)
        if d < best_d:
            best_d, best = d, i
    return best if best_d <= OCCLUSION_TOL else -1


def _boundary_points(geom, line):
    """Points where a line crosses a geometry boundary, flattened."""
    inter = geom.boundary.intersection(line)
    pts = []
    if inter.is_empty:
        return pts
    parts = getattr(inter, "geoms", [inter])
    for part in parts:
        if isinstance(part, Point):
            pts.append((part.x, part.y))
        else:  # collinear overlap: use the segment ends
            coords = np.asarray(part.coords)
            pts.append(tuple(coords[0]))
            pts.append(tuple(coords[-1]))
    return pts


def spawn_points_static(scenario: Scenario, snapshot: VisibilitySnapshot, ego_state) -> list:
    frame = scenario.frame
    halfwidth = frame.projection_halfwidth
    out = {}
    for obs in scenario.static_obstacles:
        if obs.id not in snapshot.visible_obstacle_ids:
            continue
        if obs.footprint.distance(Point(ego_state.x, ego_state.y)) > STATIC_CAUSE_RANGE:
            continue
        verts = np.asarray(obs.footprint.exterior.coords)[:-1]
        ss = []
        for vx, vy in verts:
            try:
                s, _ = frame.to_curvilinear(vx, vy)
            except GeometryError:
                continue
            ss.append(s)
        if not ss:
            continue
        for s_line in (min(ss) - _EXTENT_MARGIN, max(ss) + _EXTENT_MARGIN):
            if s_line < 0.0 or s_line > frame.length:
                continue
            cx, cy = frame.from_curvilinear(s_line, 0.0)
            nx, ny = frame.normal_at(s_line)
            line = LineString(
                [(cx - nx * halfwidth, cy - ny * halfwidth), (cx + nx * halfwidth, cy + ny * halfwidth)]
            )
            for bx, by in _boundary_points(snapshot.visible.geometry(), line):
                for sign in (1.0, -1.0):
                    x = bx + sign * nx * _NUDGE
                    y = by + sign * ny * _NUDGE
                    if not snapshot.occluded.contains_point(x, y):
                        continue
                    probe = _probe_polygon("static", x, y, 0.0)
                    if not _candidate_valid(scenario, snapshot, x, y, probe):
                        continue
                    comp = _occluded_component_index(snapshot, x, y)
                    if comp < 0:
                        continue
                    key = (obs.id, comp)
                    dist = math.hypot(x - ego_state.x, y - ego_state.y)
                    if key not in out or dist < out[key][0]:
                        out[key] = (dist, SpawnPoint(x, y, "static", obs.id, ("pedestrian",)))
                    break  # one side of the boundary is occluded, not both
    return [sp for _, sp in out.values()]


def spawn_points_lane(scenario: Scenario, snapshot: VisibilitySnapshot, ego_state) -> list:
    frame = scenario.frame
    out = []
    s0 = ego_state.s + 1e-6
    if s0 >= frame.length:
        return out
    step = 0.25
    samples = np.arange(s0, frame.length, step)
    if not len(samples):
        return out
    pts = np.asarray([frame.from_curvilinear(float(s), 0.0) for s in samples])
    # march through occluded free space; footprints of the visible obstacles
    # that cast the shadows are occluded too but can never host an agent
    occ_free = snapshot.occluded
    vis_fps = [snapshot.obstacle_footprints[oid] for oid in snapshot.visible_obstacle_ids]
    if vis_fps:
        occ_free = boolean(occ_free, PolygonSet.from_geometry(shapely.union_all(vis_fps)), "difference")
    for comp_idx, poly in enumerate(occ_free):
        inside = shapely.covers(poly, shapely.points(pts))
        idx = np.flatnonzero(inside)
        if not len(idx):
            continue
        i = int(idx[0])
        # bisect the entry between the last outside sample and the first inside
        lo = samples[i - 1] if i > 0 else s0
        hi = samples[i]
        for _ in range(20):
            mid = 0.5 * (lo + hi)
            x, y = frame.from_curvilinear(float(mid), 0.0)
            if poly.covers(Point(x, y)):
                hi = mid
            else:
                lo = mid
        # walk in from the entry until the pedestrian probe actually fits
        # (the entry is often flush against the occluding footprint itself)
        s_entry = hi + _NUDGE
        while s_entry <= min(frame.length, hi + 2.0 * PEDESTRIAN_RADIUS + 1.0):
            x, y = frame.from_curvilinear(float(s_entry), 0.0)
            probe = _probe_polygon("lane", x, y, 0.0)
            if _candidate_valid(scenario, snapshot, x, y, probe):
                out.append(SpawnPoint(x, y, "lane", None, ("pedestrian",)))
                break
            s_entry += 0.1
    return out


def spawn_points_dynamic(scenario: Scenario, snapshot: VisibilitySnapshot, ego_state) -> list:
    frame = scenario.frame
    out = []
    for obs in scenario.dynamic_obstacles:
        if obs.id not in snapshot.visible_obstacle_ids:
            continue
        ox, oy, _, _ = obs.state_at(snapshot.k, clamp=True)
        try:
            s_o, _ = frame.to_curvilinear(ox, oy)
        except GeometryError:
            continue
        if abs(s_o - ego_state.s) > DYNAMIC_CAUSE_RANGE:
            continue
        shadow = snapshot.shadows.get(obs.id)
        if shadow is None or shadow.is_empty:
            continue
        for poly in shadow:
            c = poly.centroid
            lanes = scenario.network.lanelets_containing(c.x, c.y)
            if not lanes:
                continue
            lane = min(lanes, key=lambda l: l.id)
            try:
                heading = lane.direction_at(c.x, c.y)
            except GeometryError:
                continue
            probe = _probe_polygon("dynamic", c.x, c.y, heading)
            if not poly.covers(probe):
                continue
            if _candidate_valid(scenario, snapshot, c.x, c.y, probe):
                out.append(SpawnPoint(c.x, c.y, "dynamic", obs.id, ("bicycle", "vehicle")))
    return out


def generate_spawn_points(scenario: Scenario, snapshot: VisibilitySnapshot, ego_state) -> list:
    """All spawn points, validated, deduplicated, deterministically ordered."""
    cands = (
        spawn_points_static(scenario, snapshot, ego_state)
        + spawn_points_lane(scenario, snapshot, ego_state)
        + spawn_points_dynamic(scenario, snapshot, ego_state)
    )
    vis = snapshot.visible
    kept = []
    for sp in cands:
        replace = None
        clash = False
        for j, other in enumerate(kept):
            if other.cause != sp.cause:
                continue
            if math.hypot(other.x - sp.x, other.y - sp.y) < _DEDUP_RADIUS:
                clash = True
                # keep whichever hugs the visibility boundary closer
                if vis.distance_to_boundary(sp.x, sp.y) < vis.distance_to_boundary(other.x, other.y):
                    replace = j
                break
        if not clash:
            kept.append(sp)
        elif replace is not None:
            kept[replace] = sp
    order = {"static": 0, "lane": 1, "dynamic": 2}
    kept.sort(key=lambda sp: (order[sp.cause], -1 if sp.cause_obstacle_id is None else sp.cause_obstacle_id, round(sp.x, 9), round(sp.y, 9)))
    return kept


def probe_polygon_for(scenario: Scenario, sp: SpawnPoint):
    """The footprint probe used when sp was validated (for external re-checks)."""
    heading = 0.0
    if sp.cause == "dynamic":
        lanes = scenario.network.lanelets_containing(sp.x, sp.y)
        if lanes:
            heading = min(lanes, key=lambda l: l.id).direction_at(sp.x, sp.y)
    return _probe_polygon(sp.cause, sp.x, sp.y, heading)
