"""Ego perception: range-limited line-of-sight visibility over the lanelet network.

The sensor sits at the ego center and sees everything within sensor_range
that no drivable-area boundary and no obstacle footprint blocks. The area of
interest is clipped to the lanelet union; off-road space is neither visible
nor occluded, it simply does not exist for the planner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import shapely
from shapely.geometry import Point

from .geometry import PolygonSet, boolean, ring_edges, visibility_region
from .scenario import Scenario

# tolerance when testing whether a footprint touches the visible region [m]
_VIS_TOUCH = 1e-6


@dataclass(frozen=True)
class VisibilitySnapshot:
    """Sensor output at one timestep.

    in_range is the range disc clipped to the lanelet union; visible and
    occluded partition it. shadows holds, per obstacle, the part of the
    occluded area that obstacle alone would cause (its own footprint
    excluded, so a shadow is free space that merely cannot be seen).
    """

    k: int
    origin: tuple[float, float]
    in_range: PolygonSet
    visible: PolygonSet
    occluded: PolygonSet
    shadows: dict
    visible_obstacle_ids: tuple
    obstacle_footprints: dict


def _footprints_at(scenario: Scenario, k: int) -> dict:
    fps = {o.id: o.footprint for o in scenario.static_obstacles}
    for o in scenario.dynamic_obstacles:
        x, y, theta, _ = o.state_at(k, clamp=True)
        fps[o.id] = o.shape.polygon_at(x, y, theta)
    return fps


def compute_visibility(scenario: Scenario, ego_xy, k: int) -> VisibilitySnapshot:
    ox, oy = float(ego_xy[0]), float(ego_xy[1])
    radius = scenario.ego_params.sensor_range
    range_disc = Point(ox, oy).buffer(radius, quad_segs=180)
    base = boolean(
        PolygonSet.from_geometry(range_disc), scenario.network.drivable_area, "intersection"
    )

    footprints = _footprints_at(scenario, k)
    edge_stacks = [scenario.network.wall_edges]
    per_obstacle_edges = {}
    for oid, fp in footprints.items():
        e = ring_edges(fp)
        per_obstacle_edges[oid] = e
        edge_stacks.append(e)
    all_edges = np.concatenate(edge_stacks, axis=0) if edge_stacks else np.empty((0, 4))

    # the sweep polygon is only ever clipped against base, which owns the true
    # range limit; inflate its radius so polygonization slivers cannot appear
    # along the arc
    sweep = visibility_region((ox, oy), all_edges, radius * (1.0 + 1e-4))
    visible = boolean(base, PolygonSet.from_geometry(sweep), "intersection")
    if footprints:
        occupied = PolygonSet.from_geometry(shapely.union_all(list(footprints.values())))
        visible = boolean(visible, occupied, "difference")
    occluded = boolean(base, visible, "difference")

    shadows = {}
    for oid, edges in per_obstacle_edges.items():
        solo = visibility_region((ox, oy), edges, radius * (1.0 + 1e-4))
        shadow = boolean(base, PolygonSet.from_geometry(solo), "difference")
        shadow = boolean(shadow, PolygonSet.from_geometry(footprints[oid]), "difference")
        shadows[oid] = shadow

    vis_geom = visible.geometry()
    visible_ids = tuple(
        oid
        for oid, fp in sorted(footprints.items())
        if not visible.is_empty and shapely.dwithin(fp, vis_geom, _VIS_TOUCH)
    )

    return VisibilitySnapshot(
        k=k,
        origin=(ox, oy),
        in_range=base,
        visible=visible,
        occluded=occluded,
        shadows=shadows,
        visible_obstacle_ids=visible_ids,
        obstacle_footprints=footprints,
    )
