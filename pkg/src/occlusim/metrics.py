"""Criticality metrics between a candidate ego trajectory and phantom agents.

All pairwise metrics assume the ego trajectory and every prediction share the
same horizon length and timestep; evaluate() enforces that once. Distances
are between footprints, not centers. Time-like metrics are reported in
seconds at timestep granularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import shapely

from .errors import MetricError
from .scenario import EgoParams

# position uncertainty of a phantom: sigma(t) = SIGMA0 + SIGMA_GROWTH * t [m]
SIGMA0 = 0.2
SIGMA_GROWTH = 0.3
# deceleration probe ceiling for the brake test [m/s^2]
BRAKE_CAP = 12.0
_BISECT_TOL = 0.01

# logistic harm curves per agent kind: H = 1 / (1 + exp(-(c0 + c1 * dv)))
_HARM_COEFFS = {
    "pedestrian": (-4.0, 0.4),
    "bicycle": (-4.0, 0.4),
    "vehicle": (-6.0, 0.3),
}
# closing nearly head-on raises the slope
_HEADON_FACTOR = 1.2
_HEADON_WINDOW = math.pi / 6.0


class EgoTrajectory:
    """Planned ego motion: one row (x, y, s, d, theta, v, a) per timestep.

    v is the longitudinal rate along the reference path and a its derivative;
    the Cartesian velocity is recovered from positions when needed.
    """

    COLUMNS = ("x", "y", "s", "d", "theta", "v", "a")

    def __init__(self, states, dt: float, params: EgoParams):
        arr = np.asarray(states, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 7 or len(arr) < 2:
            raise MetricError("trajectory needs >= 2 states of (x, y, s, d, theta, v, a)")
        if dt <= 0:
            raise MetricError("trajectory dt must be positive")
        self.states = arr
        self.dt = float(dt)
        self.params = params

    def __len__(self):
        return len(self.states)

    @property
    def x(self):
        return self.states[:, 0]

    @property
    def y(self):
        return self.states[:, 1]

    @property
    def s(self):
        return self.states[:, 2]

    @property
    def d(self):
        return self.states[:, 3]

    @property
    def theta(self):
        return self.states[:, 4]

    @property
    def v(self):
        return self.states[:, 5]

    @property
    def a(self):
        return self.states[:, 6]

    def footprint(self, k: int):
        x, y, theta = self.states[k, 0], self.states[k, 1], self.states[k, 4]
        return self.params.footprint_at(float(x), float(y), float(theta))

    def velocity_vector(self, k: int):
        """Cartesian velocity by finite differences of positions."""
        p = self.states[:, :2]
        if k < len(p) - 1:
            return (p[k + 1] - p[k]) / self.dt
        return (p[k] - p[k - 1]) / self.dt


def _check_horizon(ego: EgoTrajectory, prediction):
    if len(prediction.states) != len(ego):
        raise MetricError(
            f"prediction horizon {len(prediction.states)} != trajectory horizon {len(ego)}"
        )


def dce_ttce(ego: EgoTrajectory, prediction):
    """Minimum footprint clearance over the horizon and its (earliest) time."""
    _check_horizon(ego, prediction)
    dce = math.inf
    ttce = 0.0
    for k in range(len(ego)):
        gap = float(shapely.distance(ego.footprint(k), prediction.footprint(k)))
        if gap < dce:
            dce = gap
            ttce = k * ego.dt
    return dce, ttce


def ttc(ego: EgoTrajectory, prediction) -> Optional[float]:
    """Time of first footprint contact, None if they never touch."""
    _check_horizon(ego, prediction)
    for k in range(len(ego)):
        if shapely.intersects(ego.footprint(k), prediction.footprint(k)):
            return k * ego.dt
    return None


def wttc(ego: EgoTrajectory, prediction) -> Optional[float]:
    """Worst-case time-to-collision from the initial state.

    Both bodies are replaced by enclosing discs that may close the gap at
    their combined speeds. Already-overlapping discs give 0; a positive gap
    with zero combined speed never closes (None).
    """
    _check_horizon(ego, prediction)
    ex, ey = ego.states[0, 0], ego.states[0, 1]
    px, py = prediction.states[0, 0], prediction.states[0, 1]
    r_e = 0.5 * math.hypot(ego.params.length, ego.params.width)
    r_p = prediction.shape.enclosing_radius
    gap = math.hypot(px - ex, py - ey) - r_e - r_p
    if gap <= 0:
        return 0.0
    combined = float(ego.states[0, 5]) + prediction.speed
    if combined <= 0:
        return None
    return gap / combined


def _phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def _gaussian_mass_in_rectangle(mu, sigma, cx, cy, heading, length, width) -> float:
    """Exact isotropic-Gaussian mass inside an oriented rectangle.

    Rotating into the rectangle frame keeps the Gaussian isotropic, so the
    mass factorizes into two 1-D interval probabilities.
    """
    c, s = math.cos(heading), math.sin(heading)
    dx, dy = mu[0] - cx, mu[1] - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    hl, hw = 0.5 * length, 0.5 * width
    mass_u = _phi((hl - u) / sigma) - _phi((-hl - u) / sigma)
    mass_v = _phi((hw - v) / sigma) - _phi((-hw - v) / sigma)
    return mass_u * mass_v


def collision_probability(ego: EgoTrajectory, prediction) -> float:
    """Max over the horizon of the phantom position mass inside the ego box.

    The phantom position at step k is modeled as an isotropic Gaussian
    centered on its prediction with sigma growing linearly in time.
    """
    _check_horizon(ego, prediction)
    best = 0.0
    for k in range(len(ego)):
        sigma = SIGMA0 + SIGMA_GROWTH * k * ego.dt
        mass = _gaussian_mass_in_rectangle(
            prediction.states[k, :2],
            sigma,
            float(ego.states[k, 0]),
            float(ego.states[k, 1]),
            float(ego.states[k, 4]),
            ego.params.length,
            ego.params.width,
        )
        if mass > best:
            best = mass
    return min(max(best, 0.0), 1.0)


def harm(kind: str, relative_speed: float, impact_angle: Optional[float] = None) -> float:
    """Expected harm of a collision at the given closing speed, logistic in dv.

    impact_angle is the angle between the two velocity vectors; within 30
    degrees of head-on the slope steepens by 20%.
    """
    if kind not in _HARM_COEFFS:
        raise MetricError(f"unknown agent kind {kind!r}")
    if relative_speed < 0:
        raise MetricError("relative speed must be non-negative")
    c0, c1 = _HARM_COEFFS[kind]
    if impact_angle is not None and abs(abs(impact_angle) - math.pi) <= _HEADON_WINDOW:
        c1 *= _HEADON_FACTOR
    return 1.0 / (1.0 + math.exp(-(c0 + c1 * relative_speed)))


def risk(probabilities, harms) -> float:
    """Scenario risk: the worst probability-weighted harm over agents."""
    if len(probabilities) != len(harms):
        raise MetricError("probability and harm lists differ in length")
    if not len(probabilities):
        return 0.0
    return float(max(p * h for p, h in zip(probabilities, harms)))


def _slowed_positions(ego: EgoTrajectory, decel: float) -> np.ndarray:
    """(x, y, theta) rows of the ego profile slowed by a constant deceleration.

    Each original step advance shrinks by the ratio of slowed to planned
    speed, so decel = 0 reproduces the original states exactly.
    """
    p = ego.states[:, :2]
    theta = ego.states[:, 4]
    v = ego.states[:, 5]
    step_len = np.hypot(*(p[1:] - p[:-1]).T)
    k_idx = np.arange(len(v) - 1)
    vprime = np.maximum(0.0, v[:-1] - decel * k_idx * ego.dt)
    ratio = np.where(v[:-1] > 1e-12, vprime / np.maximum(v[:-1], 1e-12), 0.0)
    arcs = np.concatenate([[0.0], np.cumsum(step_len * ratio)])
    cum = np.concatenate([[0.0], np.cumsum(step_len)])
    out = np.empty((len(v), 3))
    for k, a in enumerate(arcs):
        i = int(np.searchsorted(cum, a, side="right") - 1)
        i = min(max(i, 0), len(step_len) - 1)
        if step_len[i] < 1e-12:
            out[k] = p[i][0], p[i][1], theta[i]
        else:
            f = (a - cum[i]) / step_len[i]
            out[k, :2] = p[i] + f * (p[i + 1] - p[i])
            out[k, 2] = theta[i] + f * (theta[i + 1] - theta[i])
    return out


def _slowed_profile_collides(ego: EgoTrajectory, predictions, decel: float) -> bool:
    poses = _slowed_positions(ego, decel)
    for k in range(len(poses)):
        fp = ego.params.footprint_at(*poses[k])
        for pred in predictions:
            if shapely.intersects(fp, pred.footprint(k)):
                return True
    return False


def brake_evaluation(ego: EgoTrajectory, predictions, a_veh_max: float):
    """(a_min_req, btn, capped): weakest constant braking that avoids contact.

    Bisects deceleration on [0, BRAKE_CAP] to within 0.01; capped means even
    the cap still collides. btn normalizes by the vehicle's own capability.
    """
    if a_veh_max <= 0:
        raise MetricError("a_veh_max must be positive")
    for pred in predictions:
        _check_horizon(ego, pred)
    if not _slowed_profile_collides(ego, predictions, 0.0):
        return 0.0, 0.0, False
    if _slowed_profile_collides(ego, predictions, BRAKE_CAP):
        return BRAKE_CAP, BRAKE_CAP / a_veh_max, True
    lo, hi = 0.0, BRAKE_CAP
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if _slowed_profile_collides(ego, predictions, mid):
            lo = mid
        else:
            hi = mid
    return hi, hi / a_veh_max, False


@dataclass(frozen=True)
class CriticalityReport:
    dce: Optional[float]
    ttce: Optional[float]
    ttc: Optional[float]
    wttc: Optional[float]
    cp: float
    harm: float
    risk: float
    worst_agent_id: Optional[str]
    a_min_req: float
    btn: float
    brake_capped: bool


def _relative_speed_and_angle(ego: EgoTrajectory, prediction, k: int):
    ve = ego.velocity_vector(k)
    theta = float(prediction.states[k, 2])
    va = prediction.speed * np.asarray([math.cos(theta), math.sin(theta)])
    rel = float(np.hypot(*(ve - va)))
    ne, na = float(np.hypot(*ve)), float(np.hypot(*va))
    if ne < 1e-9 or na < 1e-9:
        return rel, None
    cosang = float(np.dot(ve, va) / (ne * na))
    return rel, math.acos(min(1.0, max(-1.0, cosang)))


def evaluate(ego: EgoTrajectory, predictions) -> CriticalityReport:
    """Full criticality report of one ego trajectory against all phantoms."""
    if not predictions:
        return CriticalityReport(
            dce=None,
            ttce=None,
            ttc=None,
            wttc=None,
            cp=0.0,
            harm=0.0,
            risk=0.0,
            worst_agent_id=None,
            a_min_req=0.0,
            btn=0.0,
            brake_capped=False,
        )
    dce_best = math.inf
    ttce_best = None
    ttc_best = None
    wttc_best = None
    probs = []
    harms = []
    for pred in predictions:
        d, t_ce = dce_ttce(ego, pred)
        if d < dce_best:
            dce_best, ttce_best = d, t_ce
        t_c = ttc(ego, pred)
        if t_c is not None and (ttc_best is None or t_c < ttc_best):
            ttc_best = t_c
        t_w = wttc(ego, pred)
        if t_w is not None and (wttc_best is None or t_w < wttc_best):
            wttc_best = t_w
        p = collision_probability(ego, pred)
        k_star = int(round(t_ce / ego.dt))
        rel, angle = _relative_speed_and_angle(ego, pred, k_star)
        h = harm(pred.kind, rel, angle)
        probs.append(p)
        harms.append(h)
    products = [p * h for p, h in zip(probs, harms)]
    worst_idx = int(np.argmax(products))
    # every product zero means no phantom carries any collision mass: there is
    # no meaningful worst agent, and the potential-collision harm is nil
    no_mass = products[worst_idx] == 0.0
    a_min, btn, capped = brake_evaluation(ego, predictions, ego.params.a_max)
    return CriticalityReport(
        dce=dce_best,
        ttce=ttce_best,
        ttc=ttc_best,
        wttc=wttc_best,
        cp=float(max(probs)),
        harm=0.0 if no_mass else float(harms[worst_idx]),
        risk=float(products[worst_idx]),
        worst_agent_id=None if no_mass else predictions[worst_idx].agent_id,
        a_min_req=a_min,
        btn=btn,
        brake_capped=capped,
    )
