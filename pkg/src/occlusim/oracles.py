"""Slow reference implementations used to cross-check the fast paths.

Everything here trades speed for obviousness: dense grids, fine-timestep
marching, Monte Carlo, scalar loops. Tests freeze expected values against
these routines; nothing in the runtime pipeline may import from here.
"""

from __future__ import annotations

import math

import numpy as np
import shapely
from shapely.geometry import Point, Polygon


def _orient_sign(ax, ay, bx, by, cx, cy, eps=1e-12):
    """Sign of the signed area of triangle abc: +1 left turn, -1 right, 0 collinear."""
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if v > eps:
        return 1
    if v < -eps:
        return -1
    return 0


def segments_properly_cross(p, q, a, b) -> bool:
    """True if open segments pq and ab cross (orientation straddle test)."""
    o1 = _orient_sign(p[0], p[1], q[0], q[1], a[0], a[1])
    o2 = _orient_sign(p[0], p[1], q[0], q[1], b[0], b[1])
    o3 = _orient_sign(a[0], a[1], b[0], b[1], p[0], p[1])
    o4 = _orient_sign(a[0], a[1], b[0], b[1], q[0], q[1])
    return o1 * o2 < 0 and o3 * o4 < 0


def grid_visibility_oracle(origin, edges, radius, points) -> np.ndarray:
    """Classify each point as visible from origin given opaque edges.

    A point counts as visible iff it is within radius and its sightline
    properly crosses no edge. Grazing contacts land wherever the sign
    epsilon puts them; callers should mask a tolerance band around the
    region boundary before comparing.
    """
    pts = np.asarray(points, dtype=float)
    edges = np.asarray(edges, dtype=float).reshape(-1, 4)
    out = np.zeros(len(pts), dtype=bool)
    ox, oy = float(origin[0]), float(origin[1])
    for i, (px, py) in enumerate(pts):
        if math.hypot(px - ox, py - oy) > radius:
            continue
        blocked = False
        for ex1, ey1, ex2, ey2 in edges:
            if segments_properly_cross((ox, oy), (px, py), (ex1, ey1), (ex2, ey2)):
                blocked = True
                break
        out[i] = not blocked
    return out


def mc_gaussian_rectangle_mass(mu, sigma, rect_center, rect_heading, length, width, n, rng) -> float:
    """Monte Carlo mass of an isotropic Gaussian inside an oriented rectangle."""
    samples = np.asarray(mu, dtype=float) + sigma * rng.standard_normal((n, 2))
    dx = samples[:, 0] - rect_center[0]
    dy = samples[:, 1] - rect_center[1]
    c, s = math.cos(rect_heading), math.sin(rect_heading)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    inside = (np.abs(u) <= length / 2.0) & (np.abs(v) <= width / 2.0)
    return float(inside.mean())


def _lerp_poses(states, dt, refine):
    """Densify an (x, y, theta) pose sequence by linear interpolation.

    Returns poses at dt/refine spacing covering the same total duration.
    Headings are lerped directly, so keep fixtures away from the +-pi wrap.
    """
    arr = np.asarray(states, dtype=float)
    n = len(arr)
    fine = []
    for k in range(n - 1):
        for j in range(refine):
            f = j / refine
            fine.append(arr[k] * (1 - f) + arr[k + 1] * f)
    fine.append(arr[-1])
    return np.asarray(fine), dt / refine


def fine_encounter_oracle(ego_states, ego_shape, agent_states, agent_shape, dt, refine=10):
    """(dce, ttce, ttc) by marching both footprints at a refined timestep.

    ego_states / agent_states: sequences of (x, y, theta), equal length.
    Shapes expose polygon_at(x, y, theta). ttc is None without overlap.
    """
    ego_fine, fine_dt = _lerp_poses(ego_states, dt, refine)
    ag_fine, _ = _lerp_poses(agent_states, dt, refine)
    dce = math.inf
    ttce = 0.0
    ttc = None
    for k in range(len(ego_fine)):
        pe = ego_shape.polygon_at(*ego_fine[k])
        pa = agent_shape.polygon_at(*ag_fine[k])
        gap = shapely.distance(pe, pa)
        if gap < dce - 1e-15:
            dce = gap
            ttce = k * fine_dt
        if ttc is None and gap <= 0.0:
            ttc = k * fine_dt
    return dce, ttce, ttc


def wttc_disc_growth_oracle(ego_xy, ego_r, ego_v, agent_xy, agent_r, agent_v, t_step=1e-3, t_max=120.0):
    """First time two discs growing at their owners' speeds touch, by marching."""
    gap0 = math.hypot(agent_xy[0] - ego_xy[0], agent_xy[1] - ego_xy[1])
    t = 0.0
    while t <= t_max:
        if gap0 <= ego_r + ego_v * t + agent_r + agent_v * t:
            return t
        t += t_step
    return None


def polyline_arc_walk(points, arc_lengths) -> np.ndarray:
    """Positions at given cumulative arc lengths along a polyline (scalar march).

    Arc lengths beyond the end extrapolate along the final segment direction.
    """
    pts = np.asarray(points, dtype=float)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    out = []
    for target in np.atleast_1d(np.asarray(arc_lengths, dtype=float)):
        remaining = float(target)
        pos = pts[0].copy()
        placed = False
        for i in range(len(seg)):
            if remaining <= seg_len[i]:
                pos = pts[i] + seg[i] * (remaining / seg_len[i])
                placed = True
                break
            remaining -= seg_len[i]
        if not placed:
            pos = pts[-1] + seg[-1] / seg_len[-1] * remaining
        out.append(pos)
    return np.asarray(out)


def slowed_profile_positions(xy, v, dt, decel):
    """Re-walk a recorded path with speeds v'_k = max(0, v_k - decel*k*dt).

    xy: original positions (N, 2); v: original per-step speeds (N,).
    Returns (N, 2) positions along the original geometry. Scalar arc walk,
    independent of any frame machinery.
    """
    xy = np.asarray(xy, dtype=float)
    v = np.asarray(v, dtype=float)
    arcs = np.concatenate([[0.0], np.cumsum(np.maximum(0.0, v[:-1] - decel * np.arange(len(v) - 1) * dt) * dt)])
    # clamp to the recorded geometry; a slowed profile never outruns the original
    seg = np.diff(xy, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    arcs = np.minimum(arcs, cum[-1])
    out = np.empty_like(xy)
    for k, a in enumerate(arcs):
        i = int(np.searchsorted(cum, a, side="right") - 1)
        i = min(max(i, 0), len(seg_len) - 1)
        if seg_len[i] < 1e-12:
            out[k] = xy[i]
        else:
            f = (a - cum[i]) / seg_len[i]
            out[k] = xy[i] + f * seg[i]
    return out


def brake_grid_oracle(ego_xy, ego_theta, ego_v, ego_shape, phantom_polys_per_step, dt, a_grid):
    """Smallest deceleration on a_grid making the slowed profile collision-free.

    phantom_polys_per_step: list (len N) of lists of shapely polygons.
    Returns (a_min, capped): capped=True when even the largest grid value collides.
    """
    thetas = np.asarray(ego_theta, dtype=float)
    for a in a_grid:
        pos = slowed_profile_positions(ego_xy, ego_v, dt, a)
        hit = False
        for k in range(len(pos)):
            pe = ego_shape.polygon_at(pos[k][0], pos[k][1], thetas[k])
            for poly in phantom_polys_per_step[k]:
                if shapely.intersects(pe, poly) and shapely.intersection(pe, poly).area > 0:
                    hit = True
                    break
            if hit:
                break
        if not hit:
            return float(a), False
    return float(a_grid[-1]), True


def point_in_polygon_oracle(poly: Polygon, x: float, y: float) -> bool:
    return bool(poly.covers(Point(x, y)))
