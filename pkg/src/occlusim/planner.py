"""Frenet sampling planner with an occlusion-aware safety gate.

Candidates are quintic (lateral) / quartic (longitudinal) polynomial pairs in
the curvilinear frame, filtered for kinematic feasibility, ranked by weighted
cost, then pushed through the evaluation funnel: baseline collision check
against what the sensor actually sees, followed by the phantom-agent
criticality gate. The first candidate to pass everything is executed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import shapely

from .assessment import ThresholdConfig, assess
from .errors import MetricError, PlanExhaustionError
from .metrics import EgoTrajectory, SIGMA0, SIGMA_GROWTH, _gaussian_mass_in_rectangle, evaluate
from .phantom import predict_agents
from .scenario import EgoState, Scenario
from .sensor import compute_visibility
from .spawn import generate_spawn_points

# defaults when no lanelet posts a limit [m/s]
FALLBACK_TARGET_SPEED = 8.33
# max steering angle for the curvature feasibility bound [rad]
MAX_STEER = 0.7
# softening length in the obstacle-distance cost [m]
_DIST_EPS = 0.1


class QuinticPoly:
    """Fifth-order polynomial fixed by position/velocity/acceleration at 0 and T."""

    def __init__(self, x0, v0, a0, x1, v1, a1, T):
        if T <= 0:
            raise MetricError("polynomial horizon must be positive")
        self.T = float(T)
        c0, c1, c2 = x0, v0, 0.5 * a0
        T2, T3, T4, T5 = T**2, T**3, T**4, T**5
        m = np.array(
            [
                [T3, T4, T5],
                [3 * T2, 4 * T3, 5 * T4],
                [6 * T, 12 * T2, 20 * T3],
            ]
        )
        rhs = np.array(
            [
                x1 - (c0 + c1 * T + c2 * T2),
                v1 - (c1 + 2 * c2 * T),
                a1 - 2 * c2,
            ]
        )
        c3, c4, c5 = np.linalg.solve(m, rhs)
        self.c = np.array([c0, c1, c2, c3, c4, c5])

    def pos(self, t):
        c = self.c
        return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))

    def vel(self, t):
        c = self.c
        return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])))

    def acc(self, t):
        c = self.c
        return 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]))

    def jerk(self, t):
        c = self.c
        return 6 * c[3] + t * (24 * c[4] + t * 60 * c[5])


class QuarticPoly:
    """Fourth-order polynomial: full start state, end velocity and acceleration."""

    def __init__(self, x0, v0, a0, v1, a1, T):
        if T <= 0:
            raise MetricError("polynomial horizon must be positive")
        self.T = float(T)
        c0, c1, c2 = x0, v0, 0.5 * a0
        m = np.array(
            [
                [3 * T**2, 4 * T**3],
                [6 * T, 12 * T**2],
            ]
        )
        rhs = np.array(
            [
                v1 - (c1 + 2 * c2 * T),
                a1 - 2 * c2,
            ]
        )
        c3, c4 = np.linalg.solve(m, rhs)
        self.c = np.array([c0, c1, c2, c3, c4])

    def pos(self, t):
        c = self.c
        return c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * c[4])))

    def vel(self, t):
        c = self.c
        return c[1] + t * (2 * c[2] + t * (3 * c[3] + t * 4 * c[4]))

    def acc(self, t):
        c = self.c
        return 2 * c[2] + t * (6 * c[3] + t * 12 * c[4])

    def jerk(self, t):
        c = self.c
        return 6 * c[3] + t * 24 * c[4]


@dataclass(frozen=True)
class SamplingConfig:
    d_end: tuple = (-1.5, -0.75, 0.0, 0.75, 1.5)
    T: tuple = (2.0, 3.0)
    v_end_fractions: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)

    def __post_init__(self):
        if not self.d_end or not self.T or not self.v_end_fractions:
            raise MetricError("sampling grid lists must be non-empty")

    @classmethod
    def from_dict(cls, data: dict) -> "SamplingConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise MetricError(f"unknown sampling keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) for k, v in data.items()})


@dataclass(frozen=True)
class CostWeights:
    lateral_jerk: float = 1.0
    longitudinal_jerk: float = 1.0
    dist_to_reference: float = 3.0
    velocity: float = 0.1
    dist_to_obstacles: float = 0.1
    collision_probability: float = 200.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise MetricError(f"cost weight {f.name} must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "CostWeights":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise MetricError(f"unknown weight keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class KinematicState:
    """Curvilinear second-order state carried between replans."""

    s: float
    s_dot: float
    s_ddot: float
    d: float
    d_dot: float
    d_ddot: float


@dataclass
class Candidate:
    idx: int
    d_end: float
    T: float
    v_end: float
    trajectory: Optional[EgoTrajectory]
    lat_jerk: np.ndarray
    lon_jerk: np.ndarray
    geometry_ok: bool
    lon_poly: QuarticPoly
    lat_poly: QuinticPoly
    cost: Optional[float] = None


def sample_trajectories(
    state: KinematicState,
    cfg: SamplingConfig,
    frame,
    horizon: int,
    dt: float,
    params,
    v_target: float,
) -> list:
    """One candidate per (d_end, T, v_end) grid point, in grid order."""
    out = []
    idx = 0
    times = np.arange(horizon) * dt
    for d_end in cfg.d_end:
        for T in cfg.T:
            lat = QuinticPoly(state.d, state.d_dot, state.d_ddot, d_end, 0.0, 0.0, T)
            for frac in cfg.v_end_fractions:
                v_end = frac * v_target
                lon = QuarticPoly(state.s, state.s_dot, state.s_ddot, v_end, 0.0, T)
                s_T = lon.pos(T)
                states = np.empty((horizon, 7))
                lat_jerk = np.zeros(horizon)
                lon_jerk = np.zeros(horizon)
                geometry_ok = True
                prev_theta = None
                for k, t in enumerate(times):
                    if t <= T:
                        s_k, v_k, a_k = lon.pos(t), lon.vel(t), lon.acc(t)
                        d_k, dd_k = lat.pos(t), lat.vel(t)
                        lat_jerk[k] = lat.jerk(t)
                        lon_jerk[k] = lon.jerk(t)
                    else:
                        s_k = s_T + v_end * (t - T)
                        v_k, a_k = v_end, 0.0
                        d_k, dd_k = d_end, 0.0
                    if s_k < -1e-9 or s_k > frame.length + 1e-9:
                        geometry_ok = False
                        break
                    s_clamped = min(max(s_k, 0.0), frame.length)
                    x, y = frame.from_curvilinear(s_clamped, d_k)
                    tx, ty = frame.tangent_at(s_clamped)
                    nx, ny = frame.normal_at(s_clamped)
                    vx = v_k * tx + dd_k * nx
                    vy = v_k * ty + dd_k * ny
                    if math.hypot(vx, vy) > 1e-9:
                        theta = math.atan2(vy, vx)
                    elif prev_theta is not None:
                        theta = prev_theta
                    else:
                        theta = math.atan2(ty, tx)
                    prev_theta = theta
                    states[k] = x, y, s_k, d_k, theta, v_k, a_k
                traj = EgoTrajectory(states, dt, params) if geometry_ok else None
                out.append(
                    Candidate(
                        idx=idx,
                        d_end=float(d_end),
                        T=float(T),
                        v_end=float(v_end),
                        trajectory=traj,
                        lat_jerk=lat_jerk,
                        lon_jerk=lon_jerk,
                        geometry_ok=geometry_ok,
                        lon_poly=lon,
                        lat_poly=lat,
                    )
                )
                idx += 1
    return out


def feasibility_filter(candidates, params) -> list:
    """Keep candidates whose acceleration, speed, and curvature stay legal."""
    kappa_max = math.tan(MAX_STEER) / params.wheelbase
    kept = []
    for cand in candidates:
        if not cand.geometry_ok:
            continue
        traj = cand.trajectory
        if np.any(np.abs(traj.a) > params.a_max + 1e-9):
            continue
        if np.any(traj.v < -1e-9) or np.any(traj.v > params.v_max + 1e-9):
            continue
        p = traj.states[:, :2]
        steps = np.hypot(*(p[1:] - p[:-1]).T)
        dtheta = np.diff(traj.theta)
        dtheta = (dtheta + math.pi) % (2 * math.pi) - math.pi
        mask = steps > 1e-6
        if np.any(np.abs(dtheta[mask]) / steps[mask] > kappa_max + 1e-9):
            continue
        kept.append(cand)
    return kept


def _obstacle_future_footprints(scenario, snapshot, k0: int, horizon: int):
    """Per visible obstacle: its footprint at each absolute step k0 + k."""
    static_ids = {o.id for o in scenario.static_obstacles}
    futures = {}
    for oid in snapshot.visible_obstacle_ids:
        if oid in static_ids:
            fp = snapshot.obstacle_footprints[oid]
            futures[oid] = [fp] * horizon
        else:
            obs = scenario.dynamic_obstacle(oid)
            row = []
            for k in range(horizon):
                x, y, theta, _ = obs.state_at(k0 + k, clamp=True)
                row.append(obs.shape.polygon_at(x, y, theta))
            futures[oid] = row
    return futures


def _visible_dynamic_states(scenario, snapshot, k0: int, horizon: int):
    """Future (x, y) centers of visible dynamic obstacles, last pose held."""
    out = []
    for oid in snapshot.visible_obstacle_ids:
        try:
            obs = scenario.dynamic_obstacle(oid)
        except Exception:
            continue
        row = np.empty((horizon, 2))
        for k in range(horizon):
            x, y, _, _ = obs.state_at(k0 + k, clamp=True)
            row[k] = x, y
        out.append(row)
    return out


def _cp_visible(traj: EgoTrajectory, dynamic_centers) -> float:
    best = 0.0
    for centers in dynamic_centers:
        for k in range(len(traj)):
            sigma = SIGMA0 + SIGMA_GROWTH * k * traj.dt
            mass = _gaussian_mass_in_rectangle(
                centers[k],
                sigma,
                float(traj.states[k, 0]),
                float(traj.states[k, 1]),
                float(traj.states[k, 4]),
                traj.params.length,
                traj.params.width,
            )
            best = max(best, mass)
    return best


def rank(candidates, futures, dynamic_centers, weights: CostWeights, v_target: float, dt: float) -> list:
    """Ascending weighted cost; ties keep grid order."""
    if not candidates:
        raise MetricError("rank() needs a non-empty candidate list")
    future_list = list(futures.values())
    for cand in candidates:
        traj = cand.trajectory
        cost = weights.lateral_jerk * float(np.sum(cand.lat_jerk**2)) * dt
        cost += weights.longitudinal_jerk * float(np.sum(cand.lon_jerk**2)) * dt
        cost += weights.dist_to_reference * float(np.sum(traj.d**2)) * dt
        cost += weights.velocity * float(np.sum((traj.v - v_target) ** 2)) * dt
        if future_list:
            clearance = 0.0
            for k in range(len(traj)):
                pt = shapely.points(traj.states[k, 0], traj.states[k, 1])
                dmin = min(shapely.distance(fps[k], pt) for fps in future_list)
                clearance += 1.0 / (_DIST_EPS + dmin)
            cost += weights.dist_to_obstacles * clearance * dt
        if dynamic_centers and weights.collision_probability > 0:
            cost += weights.collision_probability * _cp_visible(traj, dynamic_centers)
        cand.cost = cost
    return sorted(candidates, key=lambda c: (c.cost, c.idx))


def _collides_with_visible(traj: EgoTrajectory, futures) -> bool:
    for k in range(len(traj)):
        fp = traj.footprint(k)
        for fps in futures.values():
            if shapely.intersects(fp, fps[k]):
                return True
    return False


@dataclass(frozen=True)
class PlanStepResult:
    trajectory: EgoTrajectory
    report: object
    rejections: int
    n_candidates: int
    n_feasible: int
    snapshot: object
    spawn_points: list
    phantoms: list
    candidate: Candidate
    fallback: bool = False


def plan_step(
    scenario: Scenario,
    state: KinematicState,
    k0: int,
    sampling: SamplingConfig,
    weights: CostWeights,
    thresholds: ThresholdConfig,
    v_target: Optional[float] = None,
    agent_speeds: Optional[dict] = None,
) -> PlanStepResult:
    """Run the full funnel once and return the first candidate that survives."""
    frame = scenario.frame
    params = scenario.ego_params
    h = scenario.horizon_steps
    dt = scenario.dt
    x, y = frame.from_curvilinear(min(state.s, frame.length), state.d)
    heading = frame.heading_at(min(state.s, frame.length))
    ego_state = EgoState(x=x, y=y, s=state.s, d=state.d, theta=heading, v=state.s_dot)

    if v_target is None:
        limit = scenario.network.speed_limit_at(x, y)
        v_target = FALLBACK_TARGET_SPEED if limit is None else limit

    snapshot = compute_visibility(scenario, (x, y), k0)
    spawn_points = generate_spawn_points(scenario, snapshot, ego_state)
    phantoms = predict_agents(scenario, spawn_points, h, dt, agent_speeds)

    candidates = sample_trajectories(state, sampling, frame, h, dt, params, v_target)
    feasible = feasibility_filter(candidates, params)
    if not feasible:
        err = PlanExhaustionError(f"step {k0}: no kinematically feasible sample out of {len(candidates)}")
        err.rejections = 0
        raise err

    futures = _obstacle_future_footprints(scenario, snapshot, k0, h)
    dynamic_centers = _visible_dynamic_states(scenario, snapshot, k0, h)
    ranked = rank(feasible, futures, dynamic_centers, weights, v_target, dt)

    rejections = 0
    for cand in ranked:
        if _collides_with_visible(cand.trajectory, futures):
            rejections += 1
            continue
        report = evaluate(cand.trajectory, phantoms)
        if assess(report, thresholds).valid:
            return PlanStepResult(
                trajectory=cand.trajectory,
                report=report,
                rejections=rejections,
                n_candidates=len(candidates),
                n_feasible=len(feasible),
                snapshot=snapshot,
                spawn_points=spawn_points,
                phantoms=phantoms,
                candidate=cand,
            )
        rejections += 1
    err = PlanExhaustionError(
        f"step {k0}: all {len(feasible)} feasible candidates rejected ({rejections} rejections)"
    )
    err.rejections = rejections
    raise err


class Planner:
    """Stateful wrapper: carries the curvilinear state from step to step."""

    def __init__(self, scenario: Scenario, sampling=None, weights=None, thresholds=None, agent_speeds=None):
        self.scenario = scenario
        self.sampling = sampling or SamplingConfig()
        self.weights = weights or CostWeights()
        self.thresholds = thresholds or ThresholdConfig()
        self.agent_speeds = agent_speeds
        init = scenario.ego_initial
        dtheta = init.theta - scenario.frame.heading_at(init.s)
        self.state = KinematicState(
            s=init.s,
            s_dot=init.v * math.cos(dtheta),
            s_ddot=0.0,
            d=init.d,
            d_dot=init.v * math.sin(dtheta),
            d_ddot=0.0,
        )

    def plan(self, k0: int, v_target: Optional[float] = None) -> PlanStepResult:
        result = plan_step(
            self.scenario,
            self.state,
            k0,
            self.sampling,
            self.weights,
            self.thresholds,
            v_target,
            self.agent_speeds,
        )
        dt = self.scenario.dt
        lon, lat = result.candidate.lon_poly, result.candidate.lat_poly
        self.state = KinematicState(
            s=float(lon.pos(dt)),
            s_dot=float(lon.vel(dt)),
            s_ddot=float(lon.acc(dt)),
            d=float(lat.pos(dt)),
            d_dot=float(lat.vel(dt)),
            d_ddot=float(lat.acc(dt)),
        )
        return result

    def fallback(self, k0: int) -> EgoTrajectory:
        """Maximum constant braking along the current lateral offset.

        Used when the funnel exhausts: no candidate was safe, so the vehicle
        sheds speed as fast as it can without changing course.
        """
        sc = self.scenario
        dt, h = sc.dt, sc.horizon_steps
        a = sc.ego_params.a_max
        st = self.state
        v0 = max(0.0, st.s_dot)
        t_stop = v0 / a if a > 0 else math.inf
        states = np.empty((h, 7))
        prev_theta = None
        for k in range(h):
            t = k * dt
            if t < t_stop:
                s_k = st.s + v0 * t - 0.5 * a * t**2
                v_k, a_k = v0 - a * t, -a
            else:
                s_k = st.s + 0.5 * v0 * t_stop if t_stop > 0 else st.s
                v_k, a_k = 0.0, 0.0
            s_cl = min(max(s_k, 0.0), sc.frame.length)
            x, y = sc.frame.from_curvilinear(s_cl, st.d)
            if v_k > 1e-9 or prev_theta is None:
                theta = sc.frame.heading_at(s_cl)
            else:
                theta = prev_theta
            prev_theta = theta
            states[k] = x, y, s_k, st.d, theta, v_k, a_k
        traj = EgoTrajectory(states, dt, sc.ego_params)
        self.state = KinematicState(
            s=float(states[1, 2]),
            s_dot=float(states[1, 5]),
            s_ddot=float(states[1, 6]),
            d=st.d,
            d_dot=0.0,
            d_ddot=0.0,
        )
        return traj
