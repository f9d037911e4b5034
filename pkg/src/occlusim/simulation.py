"""Closed-loop scenario runner.

Replans every step, executes one step of the chosen trajectory, then checks
the executed pose against the ground-truth world. Occluded real agents live in
the scenario file as ordinary dynamic obstacles; the planner only ever sees
what the sensor model reports as visible, so an agent hidden behind a parked
truck stays invisible until the geometry says otherwise, but the collision
check here always uses the full obstacle list.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import shapely

from . import planner as planner_mod
from .assessment import ThresholdConfig
from .errors import PlanExhaustionError, ScenarioError
from .planner import CostWeights, Planner, SamplingConfig
from .scenario import Scenario, load_scenario

log = logging.getLogger("occlusim.simulation")

STEPS_HEADER = "k,t,x,y,s,d,theta,v,a,R,H,p,BTN,DCE,TTC,rejections"
DEFAULT_MAX_STEPS = 500


@dataclass(frozen=True)
class StepRecord:
    """State at the start of step k plus the chosen trajectory's report."""

    k: int
    t: float
    x: float
    y: float
    s: float
    d: float
    theta: float
    v: float
    a: float
    risk: Optional[float]
    harm: Optional[float]
    cp: Optional[float]
    btn: Optional[float]
    dce: Optional[float]
    ttc: Optional[float]
    rejections: int
    fallback: bool


@dataclass
class RunConfig:
    scenario: object  # path to a scenario file, or an already-loaded Scenario
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    weights: CostWeights = field(default_factory=CostWeights)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    agent_speeds: Optional[dict] = None
    out_dir: Optional[str] = None
    verbosity: int = 0
    profiling: bool = False
    dump_areas: bool = False
    seed: int = 0
    max_steps: int = DEFAULT_MAX_STEPS


@dataclass
class RunResult:
    collision: bool
    colliding_obstacle_id: Optional[int]
    collision_timestep: Optional[int]
    goal_reached: bool
    min_velocity: float
    fallback_steps: int
    final_state: np.ndarray
    steps: list
    profile: dict
    areas: list


class Profiler:
    """Wall-clock spans per function name, reported as ms quantiles."""

    def __init__(self):
        self.samples = defaultdict(list)

    @contextmanager
    def span(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.samples[name].append(time.perf_counter() - t0)

    def wrap(self, fn, name: str):
        def timed(*args, **kwargs):
            with self.span(name):
                return fn(*args, **kwargs)

        return timed

    def quantiles(self) -> dict:
        out = {}
        for name, vals in sorted(self.samples.items()):
            ms = np.asarray(vals) * 1e3
            out[name] = {
                "min": float(np.min(ms)),
                "p25": float(np.percentile(ms, 25)),
                "median": float(np.median(ms)),
                "p75": float(np.percentile(ms, 75)),
                "max": float(np.max(ms)),
            }
        return out


@contextmanager
def _instrumented(profiler: Optional[Profiler]):
    """Temporarily route the planner's inner stages through the profiler.

    Single-threaded by construction, so swapping the module references for the
    duration of a run attributes spans to the right function.
    """
    if profiler is None:
        yield
        return
    originals = {
        name: getattr(planner_mod, name)
        for name in ("compute_visibility", "generate_spawn_points", "predict_agents", "evaluate")
    }
    for name, fn in originals.items():
        setattr(planner_mod, name, profiler.wrap(fn, name))
    try:
        yield
    finally:
        for name, fn in originals.items():
            setattr(planner_mod, name, fn)


def _load(cfg: RunConfig) -> Scenario:
    if isinstance(cfg.scenario, Scenario):
        return cfg.scenario
    return load_scenario(cfg.scenario)


def _collision_at(scenario: Scenario, x: float, y: float, theta: float, k: int) -> Optional[int]:
    """Id of the first real obstacle overlapping the ego footprint, else None."""
    ego_fp = scenario.ego_params.footprint_at(x, y, theta)
    for obs in scenario.static_obstacles:
        if shapely.intersects(ego_fp, obs.footprint):
            return obs.id
    for obs in scenario.dynamic_obstacles:
        ox, oy, oth, _ = obs.state_at(k, clamp=True)
        if shapely.intersects(ego_fp, obs.shape.polygon_at(ox, oy, oth)):
            return obs.id
    return None


def _record(k: int, dt: float, state_row, report, rejections: int, fallback: bool) -> StepRecord:
    x, y, s, d, theta, v, a = (float(c) for c in state_row)
    return StepRecord(
        k=k,
        t=k * dt,
        x=x,
        y=y,
        s=s,
        d=d,
        theta=theta,
        v=v,
        a=a,
        risk=None if report is None else report.risk,
        harm=None if report is None else report.harm,
        cp=None if report is None else report.cp,
        btn=None if report is None else report.btn,
        dce=None if report is None else report.dce,
        ttc=None if report is None else report.ttc,
        rejections=rejections,
        fallback=fallback,
    )


def _area_snapshot(k: int, snapshot) -> dict:
    wkt = lambda ps: shapely.to_wkt(ps.geometry(), rounding_precision=9)
    return {
        "k": k,
        "origin": [snapshot.origin[0], snapshot.origin[1]],
        "visible": wkt(snapshot.visible),
        "occluded": wkt(snapshot.occluded),
        "shadows": {str(oid): wkt(g) for oid, g in sorted(snapshot.shadows.items())},
        "visible_obstacle_ids": list(snapshot.visible_obstacle_ids),
    }


def run(cfg: RunConfig) -> RunResult:
    """Closed loop until collision, goal, or the step budget runs out."""
    scenario = _load(cfg)
    profiler = Profiler() if cfg.profiling else None
    planner = Planner(scenario, cfg.sampling, cfg.weights, cfg.thresholds, cfg.agent_speeds)
    dt = scenario.dt

    records = []
    areas = []
    fallback_steps = 0
    collision_id = None
    collision_k = None
    goal_reached = False

    init = scenario.ego_initial
    hit = _collision_at(scenario, init.x, init.y, init.theta, 0)
    if hit is not None:
        collision_id, collision_k = hit, 0

    executed = None
    with _instrumented(profiler):
        k = 0
        while collision_id is None and not goal_reached and k < cfg.max_steps:
            try:
                if profiler is not None:
                    with profiler.span("plan_step"):
                        result = planner.plan(k)
                else:
                    result = planner.plan(k)
                traj = result.trajectory
                report = result.report
                rejections = result.rejections
                fallback = False
                if cfg.dump_areas:
                    areas.append(_area_snapshot(k, result.snapshot))
            except PlanExhaustionError as exc:
                log.info("step %d: %s; falling back to max braking", k, exc)
                traj = planner.fallback(k)
                report = None
                rejections = getattr(exc, "rejections", 0)
                fallback = True
                fallback_steps += 1
            records.append(_record(k, dt, traj.states[0], report, rejections, fallback))

            executed = traj.states[1]
            k += 1
            hit = _collision_at(scenario, executed[0], executed[1], executed[4], k)
            if hit is not None:
                collision_id, collision_k = hit, k
                log.info("collision with obstacle %s at step %d", hit, k)
            elif executed[2] >= scenario.goal_s:
                goal_reached = True

    if records:
        min_velocity = min(r.v for r in records)
        last = executed.copy()  # the pose one step past the last record
    else:
        min_velocity = init.v
        last = np.array([init.x, init.y, init.s, init.d, init.theta, init.v, 0.0])

    return RunResult(
        collision=collision_id is not None,
        colliding_obstacle_id=collision_id,
        collision_timestep=collision_k,
        goal_reached=goal_reached,
        min_velocity=min_velocity,
        fallback_steps=fallback_steps,
        final_state=last,
        steps=records,
        profile=profiler.quantiles() if profiler is not None else {},
        areas=areas,
    )


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    return format(float(value), ".9g")


def steps_csv_rows(result: RunResult):
    yield STEPS_HEADER.split(",")
    for r in result.steps:
        yield [
            str(r.k),
            _fmt(r.t),
            _fmt(r.x),
            _fmt(r.y),
            _fmt(r.s),
            _fmt(r.d),
            _fmt(r.theta),
            _fmt(r.v),
            _fmt(r.a),
            _fmt(r.risk),
            _fmt(r.harm),
            _fmt(r.cp),
            _fmt(r.btn),
            _fmt(r.dce),
            _fmt(r.ttc),
            str(r.rejections),
        ]


def result_summary(result: RunResult, cfg: RunConfig) -> dict:
    return {
        "collision": result.collision,
        "colliding_obstacle_id": result.colliding_obstacle_id,
        "collision_timestep": result.collision_timestep,
        "goal_reached": result.goal_reached,
        "min_velocity": round(result.min_velocity, 9),
        "fallback_steps": result.fallback_steps,
        "steps": len(result.steps),
        "final_s": round(float(result.final_state[2]), 9),
        "thresholds": cfg.thresholds.to_dict(),
        "seed": cfg.seed,
    }


def emit_outputs(result: RunResult, cfg: RunConfig) -> list:
    """Write result files into cfg.out_dir; returns the paths written."""
    if cfg.out_dir is None:
        raise ScenarioError("emit_outputs needs cfg.out_dir")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "result.json"
    path.write_text(json.dumps(result_summary(result, cfg), sort_keys=True, indent=2) + "\n")
    written.append(path)

    path = out / "steps.csv"
    with path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(steps_csv_rows(result))
    written.append(path)

    path = out / "profile_plot.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "v"])
        for r in result.steps:
            w.writerow([_fmt(r.s), _fmt(r.v)])
    written.append(path)

    if cfg.profiling:
        path = out / "profile.json"
        path.write_text(json.dumps(result.profile, sort_keys=True, indent=2) + "\n")
        written.append(path)

    if cfg.dump_areas:
        area_dir = out / "areas"
        area_dir.mkdir(exist_ok=True)
        for snap in result.areas:
            path = area_dir / f"step_{snap['k']}.json"
            path.write_text(json.dumps(snap, sort_keys=True, indent=2) + "\n")
            written.append(path)

    return written
