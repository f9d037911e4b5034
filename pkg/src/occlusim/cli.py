"""Command-line entry points.

    occlusim run --scenario s.json [--config c.json] [--set thresholds.R_max=0.01]
                 [--out results/] [--profile] [--dump-areas] [--seed N]
                 [--matrix thresholds.R_max=0.1,0.05,0.01]
    occlusim validate --scenario s.json
    occlusim oracle <name>

Exit codes: 0 on success (a detected collision is a simulation result, not an
error), 1 on configuration problems, 2 on internal failures.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .assessment import ThresholdConfig
from .errors import MetricError, OcclusimError, ScenarioError
from .planner import CostWeights, SamplingConfig
from .scenario import load_scenario
from .simulation import RunConfig, emit_outputs, result_summary, run

log = logging.getLogger("occlusim.cli")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_set(config: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ScenarioError(f"--set expects key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    parts = key.strip().split(".")
    node = config
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ScenarioError(f"--set path {key!r} collides with a non-dict entry")
    node[parts[-1]] = _parse_value(raw)


def _build_run_config(args, config: dict) -> RunConfig:
    return RunConfig(
        scenario=args.scenario,
        thresholds=ThresholdConfig.from_dict(config.get("thresholds", {})),
        weights=CostWeights.from_dict(config.get("weights", {})),
        sampling=SamplingConfig.from_dict(config.get("sampling", {})),
        agent_speeds=config.get("agent_speeds"),
        out_dir=args.out,
        verbosity=args.verbose,
        profiling=args.profile,
        dump_areas=args.dump_areas,
        seed=args.seed,
        max_steps=int(config.get("max_steps", RunConfig.max_steps)),
    )


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: config root must be an object")
    return data


def _print_result(summary: dict) -> None:
    if summary["collision"]:
        line = (
            f"collision with obstacle {summary['colliding_obstacle_id']}"
            f" at step {summary['collision_timestep']}"
        )
    elif summary["goal_reached"]:
        line = "goal reached"
    else:
        line = "step budget exhausted"
    print(f"{line}; min velocity {summary['min_velocity']:.3f} m/s over {summary['steps']} steps")


def _cmd_run(args) -> int:
    config = _load_config_file(args.config)
    for assignment in args.set or []:
        _apply_set(config, assignment)

    if args.matrix:
        key, _, raw = args.matrix.partition("=")
        if not raw:
            raise ScenarioError("--matrix expects key=v1,v2,...")
        values = [_parse_value(v) for v in raw.split(",")]
        base_out = Path(args.out) if args.out else Path("matrix_out")
        summaries = {}
        for value in values:
            variant = copy.deepcopy(config)
            _apply_set(variant, f"{key}={json.dumps(value)}")
            sub_args = argparse.Namespace(**vars(args))
            sub_args.out = str(base_out / f"{key.split('.')[-1]}={value}")
            cfg = _build_run_config(sub_args, variant)
            result = run(cfg)
            emit_outputs(result, cfg)
            summaries[str(value)] = result_summary(result, cfg)
            _print_result(summaries[str(value)])
        base_out.mkdir(parents=True, exist_ok=True)
        (base_out / "matrix_summary.json").write_text(
            json.dumps({"key": key, "runs": summaries}, sort_keys=True, indent=2) + "\n"
        )
        return 0

    cfg = _build_run_config(args, config)
    result = run(cfg)
    if cfg.out_dir is not None:
        emit_outputs(result, cfg)
    summary = result_summary(result, cfg)
    _print_result(summary)
    if args.out is None:
        print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def _cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(
        f"OK: {len(sc.network.lanelets)} lanelets, "
        f"{len(sc.static_obstacles)} static / {len(sc.dynamic_obstacles)} dynamic obstacles, "
        f"dt={sc.dt}, horizon={sc.horizon_steps}, goal_s={sc.goal_s}"
    )
    return 0


def _oracle_visibility() -> None:
    from .geometry import ring_edges, visibility_region
    from .oracles import grid_visibility_oracle

    wall = np.array([[4.0, -3.0, 4.0, 3.0]])
    region = visibility_region((0.0, 0.0), wall, 10.0)
    rng = np.random.default_rng(0)
    pts = rng.uniform(-10, 10, size=(20000, 2))
    expected = grid_visibility_oracle((0.0, 0.0), wall, 10.0, pts)
    import shapely

    got = shapely.intersects(region, shapely.points(pts))
    agree = float(np.mean(got == expected))
    print(f"visibility sweep vs ray-march grid: {agree:.4%} agreement on {len(pts)} points")


def _oracle_gaussian() -> None:
    from .metrics import _gaussian_mass_in_rectangle
    from .oracles import mc_gaussian_rectangle_mass

    rng = np.random.default_rng(0)
    mu = np.array([1.0, 0.5])
    exact = _gaussian_mass_in_rectangle(mu, 0.8, 0.0, 0.0, 0.3, 4.5, 2.0)
    mc = mc_gaussian_rectangle_mass(mu, 0.8, (0.0, 0.0), 0.3, 4.5, 2.0, 1_000_000, rng)
    print(f"rectangle mass closed form {exact:.6f} vs 1e6-sample MC {mc:.6f} (|diff| {abs(exact - mc):.2e})")


def _oracle_encounter() -> None:
    from .metrics import EgoTrajectory, dce_ttce, ttc
    from .oracles import fine_encounter_oracle
    from .phantom import PhantomPrediction
    from .scenario import DiscShape, EgoParams, RectShape

    params = EgoParams(length=4.5, width=2.0, wheelbase=2.7, sensor_range=50.0, a_max=8.0, v_max=13.0)
    h, dt = 31, 0.1
    states = np.zeros((h, 7))
    states[:, 0] = 8.0 * dt * np.arange(h)
    states[:, 2] = states[:, 0]
    states[:, 5] = 8.0
    ego = EgoTrajectory(states, dt, params)
    walk = np.zeros((h, 3))
    walk[:, 0] = 12.0
    walk[:, 1] = 4.0 - 1.4 * dt * np.arange(h)
    walk[:, 2] = -np.pi / 2
    ped = PhantomPrediction("p", "pedestrian", DiscShape(0.35), walk, 1.4, ())
    d, t_ce = dce_ttce(ego, ped)
    t_c = ttc(ego, ped)
    fd, ft, fc = fine_encounter_oracle(states[:, [0, 1, 4]], RectShape(4.5, 2.0), walk, DiscShape(0.35), dt)
    print(f"coarse dce/ttce/ttc = {d:.4f}/{t_ce:.2f}/{t_c} vs fine-grid {fd:.4f}/{ft:.3f}/{fc}")


def _oracle_brake() -> None:
    from .metrics import EgoTrajectory, brake_evaluation
    from .oracles import brake_grid_oracle
    from .phantom import PhantomPrediction
    from .scenario import DiscShape, EgoParams, RectShape

    params = EgoParams(length=4.5, width=2.0, wheelbase=2.7, sensor_range=50.0, a_max=8.0, v_max=13.0)
    h, dt = 31, 0.1
    states = np.zeros((h, 7))
    states[:, 0] = 8.0 * dt * np.arange(h)
    states[:, 2] = states[:, 0]
    states[:, 5] = 8.0
    ego = EgoTrajectory(states, dt, params)
    blocker = np.zeros((h, 3))
    blocker[:, 0] = 18.0
    ped = PhantomPrediction("p", "pedestrian", DiscShape(0.35), blocker, 0.0, ())
    a_req, _, capped = brake_evaluation(ego, [ped], params.a_max)
    shape = DiscShape(0.35)
    polys = [[shape.polygon_at(*blocker[k])] for k in range(h)]
    grid_a, grid_capped = brake_grid_oracle(
        states[:, :2], states[:, 4], states[:, 5], RectShape(4.5, 2.0), polys, dt, np.arange(0.0, 12.01, 0.01)
    )
    print(f"bisection a_min {a_req:.3f} (capped={capped}) vs 0.01-grid {grid_a:.3f} (capped={grid_capped})")


_ORACLES = {
    "visibility": _oracle_visibility,
    "gaussian": _oracle_gaussian,
    "encounter": _oracle_encounter,
    "brake": _oracle_brake,
}


def _cmd_oracle(args) -> int:
    if args.name == "list" or args.name not in _ORACLES:
        print("available oracle suites: " + ", ".join(sorted(_ORACLES)))
        return 0 if args.name == "list" else 1
    _ORACLES[args.name]()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occlusim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario closed-loop")
    p_run.add_argument("--scenario", required=True, help="scenario JSON file")
    p_run.add_argument("--config", help="run configuration JSON file")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry, dotted path")
    p_run.add_argument("--out", help="output directory for result files")
    p_run.add_argument("--profile", action="store_true", help="collect per-function runtime quantiles")
    p_run.add_argument("--dump-areas", action="store_true", help="write per-step visibility polygons")
    p_run.add_argument("--seed", type=int, default=0, help="seed for Monte-Carlo oracles (pipeline is deterministic)")
    p_run.add_argument("--matrix", metavar="KEY=V1,V2,...", help="sweep one config key over a value list")
    p_run.add_argument("-v", "--verbose", action="count", default=0)
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("--scenario", required=True)
    p_val.add_argument("-v", "--verbose", action="count", default=0)
    p_val.set_defaults(func=_cmd_validate)

    p_orc = sub.add_parser("oracle", help="run a brute-force oracle suite")
    p_orc.add_argument("name", help="suite name, or 'list'")
    p_orc.add_argument("-v", "--verbose", action="count", default=0)
    p_orc.set_defaults(func=_cmd_oracle)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, MetricError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OcclusimError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
