"""Planar geometry kernel: polygon sets, visibility sweep, curvilinear frame.

All coordinates are metric (x, y) in a fixed world frame. Polygon booleans are
delegated to shapely/GEOS with snap rounding for robustness; the visibility
sweep and the curvilinear frame are implemented directly on numpy arrays.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
import shapely
from shapely.geometry import MultiPolygon, Point, Polygon
from shapely.geometry.polygon import orient

from .errors import GeometryError

# snap grid for boolean robustness [m]
SNAP_GRID = 1e-9
# polygons below this area are treated as numerical debris [m^2]
_SLIVER_AREA = 1e-12
# minimum ray parameter, guards hits at the ray origin
_RAY_EPS = 1e-9
# angular offset around occluder endpoints to catch silhouette jumps [rad]
_ANG_EPS = 1e-4

VALID_BOOLEAN_OPS = ("union", "intersection", "difference")


def _flatten(geom) -> list[Polygon]:
    """Collect the polygonal parts of any shapely geometry into a flat list."""
    if geom is None or geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom] if geom.area > _SLIVER_AREA else []
    out: list[Polygon] = []
    if hasattr(geom, "geoms"):
        for g in geom.geoms:
            out.extend(_flatten(g))
    return out


class PolygonSet:
    """Disjoint collection of simple polygons (possibly with holes).

    The empty set has no members. Members are assumed disjoint, which holds
    for everything produced by :func:`boolean` and the sensor pipeline.
    """

    __slots__ = ("polys", "_geom")

    def __init__(self, polys: Sequence[Polygon] = ()):
        # sliver filtering happens in _flatten; direct construction keeps the
        # input so that invalid rings survive long enough to be rejected
        self.polys = [p for p in polys if not p.is_empty]
        self._geom = None

    @classmethod
    def from_geometry(cls, geom) -> "PolygonSet":
        return cls(_flatten(geom))

    @property
    def area(self) -> float:
        return float(sum(p.area for p in self.polys))

    @property
    def is_empty(self) -> bool:
        return not self.polys

    def geometry(self):
        """Members as a single shapely geometry (cached)."""
        if self._geom is None:
            if not self.polys:
                self._geom = Polygon()
            elif len(self.polys) == 1:
                self._geom = self.polys[0]
            else:
                self._geom = MultiPolygon(self.polys)
        return self._geom

    def contains_point(self, x: float, y: float) -> bool:
        return bool(shapely.intersects(self.geometry(), Point(x, y)))

    def covers(self, geom) -> bool:
        return bool(shapely.covers(self.geometry(), geom))

    def distance_to_boundary(self, x: float, y: float) -> float:
        if self.is_empty:
            return math.inf
        return float(self.geometry().boundary.distance(Point(x, y)))

    def __iter__(self):
        return iter(self.polys)

    def __len__(self):
        return len(self.polys)


def _validated(ps: PolygonSet, side: str):
    for p in ps.polys:
        if not p.is_valid:
            raise GeometryError(f"{side} operand has an invalid (self-intersecting) ring")
    return ps.geometry()


def boolean(a: PolygonSet, b: PolygonSet, op: str) -> PolygonSet:
    """Regularized boolean of two polygon sets.

    op is one of 'union' | 'intersection' | 'difference'. Results are snapped
    to SNAP_GRID and returned as disjoint simple polygons; zero-area debris is
    dropped.
    """
    if op not in VALID_BOOLEAN_OPS:
        raise GeometryError(f"unknown boolean op {op!r}")
    ga = _validated(a, "left")
    gb = _validated(b, "right")
    if op == "union":
        res = shapely.union(ga, gb)
    elif op == "intersection":
        res = shapely.intersection(ga, gb)
    else:
        res = shapely.difference(ga, gb)
    res = shapely.set_precision(res, SNAP_GRID)
    return PolygonSet.from_geometry(res)


def min_distance(a, b) -> float:
    """Euclidean clearance between two geometries; 0.0 when they touch or overlap."""
    return float(shapely.distance(a, b))


def oriented_rectangle(cx: float, cy: float, heading: float, length: float, width: float) -> Polygon:
    """Axis rectangle of size length x width centered at (cx, cy), rotated to heading."""
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = 0.5 * length, 0.5 * width
    corners = []
    for lx, ly in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
        corners.append((cx + c * lx - s * ly, cy + s * lx + c * ly))
    return Polygon(corners)


def disc(cx: float, cy: float, radius: float, quad_segs: int = 16) -> Polygon:
    return Point(cx, cy).buffer(radius, quad_segs=quad_segs)


def ring_edges(geom) -> np.ndarray:
    """Boundary segments of a polygonal geometry as an (M, 4) array.

    Exterior and hole rings both contribute; non-polygonal parts are ignored.
    """
    segs: list[np.ndarray] = []
    for poly in _flatten(geom):
        rings = [poly.exterior, *poly.interiors]
        for ring in rings:
            xy = np.asarray(ring.coords, dtype=float)
            if len(xy) < 2:
                continue
            segs.append(np.concatenate([xy[:-1], xy[1:]], axis=1))
    if not segs:
        return np.zeros((0, 4))
    return np.concatenate(segs, axis=0)


def _segment_distances(edges: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Distance from point p to each segment in an (M, 4) array."""
    a = edges[:, :2]
    e = edges[:, 2:] - a
    ee = np.einsum("ij,ij->i", e, e)
    t = np.clip(np.einsum("ij,ij->i", p[None, :] - a, e) / np.maximum(ee, 1e-30), 0.0, 1.0)
    foot = a + t[:, None] * e
    return np.hypot(foot[:, 0] - p[0], foot[:, 1] - p[1])


def visibility_region(
    origin: Sequence[float],
    edges: Iterable[Sequence[float]],
    radius: float,
    angular_resolution: float = math.radians(0.5),
) -> Polygon:
    """Star-shaped region visible from origin within radius, occluded by edges.

    edges is an (M, 4) array-like of opaque segments (x1, y1, x2, y2). Rays are
    cast toward every in-range segment endpoint (plus +-_ANG_EPS offsets to pick
    up silhouette jumps) and at the fixed angular resolution to approximate the
    range arc; each ray keeps the nearest intersection. The origin must lie in
    free space (not strictly inside an occluder footprint).
    """
    if radius <= 0:
        raise GeometryError("visibility radius must be positive")
    o = np.asarray(origin, dtype=float)
    E = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=float)
    E = E.reshape(-1, 4)
    if len(E):
        E = E[_segment_distances(E, o) <= radius]

    angles = np.arange(0.0, 2.0 * math.pi, angular_resolution)
    if len(E):
        pts = np.concatenate([E[:, :2], E[:, 2:]], axis=0)
        # where an edge leaves the range circle the region has a corner too;
        # solve |p1 + u*e - o|^2 = r^2 for u in [0, 1] and aim rays there
        p1 = E[:, :2]
        e = E[:, 2:] - p1
        w = p1 - o[None, :]
        qa = np.einsum("ij,ij->i", e, e)
        qb = 2.0 * np.einsum("ij,ij->i", w, e)
        qc = np.einsum("ij,ij->i", w, w) - radius**2
        disc_q = qb**2 - 4.0 * qa * qc
        hit = disc_q > 0
        if hit.any():
            root = np.sqrt(disc_q[hit])
            denom_q = 2.0 * np.maximum(qa[hit], 1e-30)
            for sign in (-1.0, 1.0):
                u = (-qb[hit] + sign * root) / denom_q
                sel = (u > 0.0) & (u < 1.0)
                if sel.any():
                    cross = p1[hit][sel] + u[sel, None] * e[hit][sel]
                    pts = np.concatenate([pts, cross], axis=0)
        base = np.arctan2(pts[:, 1] - o[1], pts[:, 0] - o[0])
        angles = np.concatenate([angles, base - _ANG_EPS, base, base + _ANG_EPS])
    angles = np.unique(np.mod(angles, 2.0 * math.pi))
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)

    t = np.full(len(dirs), radius)
    if len(E):
        p1 = E[:, :2]
        e = E[:, 2:] - p1  # (M, 2)
        w = p1 - o[None, :]  # (M, 2)
        w_cross_e = w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]  # (M,)
        denom = dirs[:, 0, None] * e[None, :, 1] - dirs[:, 1, None] * e[None, :, 0]  # (K, M)
        w_cross_d = w[None, :, 0] * dirs[:, 1, None] - w[None, :, 1] * dirs[:, 0, None]  # (K, M)
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hit = w_cross_e[None, :] / denom
            u_hit = w_cross_d / denom
        ok = (
            (np.abs(denom) > 1e-14)
            & (u_hit >= -_RAY_EPS)
            & (u_hit <= 1.0 + _RAY_EPS)
            & (t_hit >= _RAY_EPS)
        )
        t_hit = np.where(ok, t_hit, np.inf)
        t = np.minimum(t, t_hit.min(axis=1))

    verts = o[None, :] + dirs * t[:, None]
    poly = Polygon(verts)
    if not poly.is_valid:
        poly = poly.buffer(0)
        parts = _flatten(poly)
        if not parts:
            return Polygon()
        poly = max(parts, key=lambda p: p.area)
    return orient(poly)


class CurvilinearFrame:
    """Arc-length frame along a piecewise-linear reference path.

    to_curvilinear projects a world point to (s, d): s is the arc length of the
    closest foot point along the path, d the signed lateral offset (positive on
    the left of the travel direction). Ambiguous projections (equidistant
    segments) resolve to the smaller s.
    """

    def __init__(self, points, projection_halfwidth: float = 30.0):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise GeometryError("reference path needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        seglen = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seglen < 1e-12):
            raise GeometryError("reference path has duplicate consecutive points")
        self.points = pts
        self._seglen = seglen
        self._tangent = seg / seglen[:, None]
        self._cum = np.concatenate([[0.0], np.cumsum(seglen)])  # arc-length LUT
        self.length = float(self._cum[-1])
        self.projection_halfwidth = float(projection_halfwidth)

    def to_curvilinear(self, x: float, y: float) -> tuple[float, float]:
        """Project a world point onto the path.

        Raises GeometryError when the projection falls beyond either path end
        or farther laterally than the projection halfwidth.
        """
        p = np.array([x, y])
        a = self.points[:-1]
        rel = p[None, :] - a
        u = np.einsum("ij,ij->i", rel, self._tangent)
        u_clamped = np.clip(u, 0.0, self._seglen)
        foot = a + u_clamped[:, None] * self._tangent
        dist = np.hypot(foot[:, 0] - p[0], foot[:, 1] - p[1])
        best = float(dist.min())
        # equidistant candidates resolve to the smallest s
        i = int(np.nonzero(dist <= best + 1e-9)[0][0])
        if i == 0 and u[0] < -1e-9:
            raise GeometryError("projection falls beyond the path start")
        if i == len(a) - 1 and u[-1] > self._seglen[-1] + 1e-9:
            raise GeometryError("projection falls beyond the path end")
        s = float(self._cum[i] + u_clamped[i])
        tx, ty = self._tangent[i]
        dxy = p - foot[i]
        d = float(tx * dxy[1] - ty * dxy[0])
        # clamped feet at interior vertices: keep the full offset magnitude
        if abs(abs(d) - dist[i]) > 1e-9:
            d = math.copysign(dist[i], d if d != 0.0 else 1.0)
        if abs(d) > self.projection_halfwidth:
            raise GeometryError("projection outside the lateral domain of the frame")
        return s, d

    def _segment_index(self, s: float) -> int:
        if s < -1e-9 or s > self.length + 1e-9:
            raise GeometryError(f"arc length {s} outside [0, {self.length}]")
        i = int(np.searchsorted(self._cum, min(max(s, 0.0), self.length), side="right")) - 1
        return min(max(i, 0), len(self._seglen) - 1)

    def from_curvilinear(self, s: float, d: float) -> tuple[float, float]:
        """Inverse map (s, d) -> world point."""
        i = self._segment_index(s)
        local = min(max(s, 0.0), self.length) - self._cum[i]
        tx, ty = self._tangent[i]
        bx = self.points[i, 0] + tx * local
        by = self.points[i, 1] + ty * local
        return bx - ty * d, by + tx * d

    def tangent_at(self, s: float) -> tuple[float, float]:
        tx, ty = self._tangent[self._segment_index(s)]
        return float(tx), float(ty)

    def normal_at(self, s: float) -> tuple[float, float]:
        tx, ty = self.tangent_at(s)
        return -ty, tx

    def heading_at(self, s: float) -> float:
        tx, ty = self.tangent_at(s)
        return math.atan2(ty, tx)

    def point_at(self, s: float) -> tuple[float, float]:
        return self.from_curvilinear(s, 0.0)
