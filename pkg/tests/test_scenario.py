"""Scenario model: loading, validation, round-trip, obstacle footprints."""

import json
import math

import numpy as np
import pytest

from occlusim.errors import ScenarioError
from occlusim.scenario import (
    DiscShape,
    RectShape,
    load_scenario,
    obstacle_footprint,
    scenario_from_dict,
    scenario_to_dict,
)
from conftest import moving_states, stopped_car_states, straight_road_dict


def test_load_minimal_scenario(straight_scenario):
    sc = straight_scenario
    assert sc.dt == pytest.approx(0.1)
    assert sc.horizon_steps == 31
    assert sc.ego_initial.s == pytest.approx(5.0)
    assert sc.ego_initial.d == pytest.approx(0.0, abs=1e-12)
    assert sc.network.get(1).speed_limit == pytest.approx(13.0)


def test_round_trip_through_dict(straight_scenario):
    d1 = scenario_to_dict(straight_scenario)
    sc2 = scenario_from_dict(d1)
    d2 = scenario_to_dict(sc2)
    assert json.dumps(d1, sort_keys=True) == json.dumps(d2, sort_keys=True)


def test_load_scenario_reports_json_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "meta": oops\n}')
    with pytest.raises(ScenarioError, match="line 2"):
        load_scenario(p)


def test_missing_field_names_the_field():
    data = straight_road_dict()
    del data["ego"]["goal_s"]
    with pytest.raises(ScenarioError, match="goal_s"):
        scenario_from_dict(data)


def test_unknown_dynamic_kind_rejected():
    data = straight_road_dict()
    data["dynamic_obstacles"] = [
        {"id": 9, "kind": "horse", "shape": {"radius": 0.4}, "states": stopped_car_states(50, -1.75, 0, 3)}
    ]
    with pytest.raises(ScenarioError, match="horse"):
        scenario_from_dict(data)


def test_duplicate_obstacle_ids_rejected():
    data = straight_road_dict()
    data["static_obstacles"] = [{"id": 9, "polygon": [[40, -3], [42, -3], [42, -2], [40, -2]]}]
    data["dynamic_obstacles"] = [
        {"id": 9, "kind": "car", "shape": {"length": 4.5, "width": 2.0}, "states": stopped_car_states(60, -1.75, 0, 3)}
    ]
    with pytest.raises(ScenarioError, match="unique"):
        scenario_from_dict(data)


def test_noncontiguous_states_rejected():
    data = straight_road_dict()
    states = stopped_car_states(60, -1.75, 0, 3)
    states[2]["t"] = 0.5
    data["dynamic_obstacles"] = [{"id": 9, "kind": "car", "shape": {"radius": 1.0}, "states": states}]
    with pytest.raises(ScenarioError, match="contiguous"):
        scenario_from_dict(data)


def test_dangling_successor_rejected():
    data = straight_road_dict()
    data["lanelets"][0]["successors"] = [99]
    with pytest.raises(ScenarioError, match="99"):
        scenario_from_dict(data)


def test_ego_outside_drivable_area_rejected():
    data = straight_road_dict()
    data["ego"]["initial"]["y"] = 40.0
    data["ego"]["reference_path"] = [[0.0, 40.0], [120.0, 40.0]]
    with pytest.raises(ScenarioError, match="drivable"):
        scenario_from_dict(data)


def test_obstacle_footprint_rect_and_range():
    data = straight_road_dict()
    data["dynamic_obstacles"] = [
        {
            "id": 9,
            "kind": "car",
            "shape": {"length": 4.0, "width": 2.0},
            "states": moving_states(50.0, -1.75, 0.0, 5.0, 4),
        }
    ]
    sc = scenario_from_dict(data)
    obs = sc.dynamic_obstacle(9)
    fp = obstacle_footprint(obs, 2)
    assert fp.area == pytest.approx(8.0, abs=1e-9)
    assert fp.centroid.x == pytest.approx(51.0)
    with pytest.raises(ScenarioError):
        obstacle_footprint(obs, 4)
    # clamped access holds the last recorded pose
    x, y, theta, v = obs.state_at(99, clamp=True)
    assert x == pytest.approx(51.5)


def test_shapes_expose_area_and_radius():
    r = RectShape(4.0, 2.0)
    assert r.enclosing_radius == pytest.approx(math.hypot(4, 2) / 2)
    d = DiscShape(0.35)
    assert d.area == pytest.approx(math.pi * 0.35**2)
    assert d.polygon_at(1.0, 2.0, 0.7).centroid.x == pytest.approx(1.0, abs=1e-9)


def test_lanelet_centerline_and_direction():
    data = straight_road_dict()
    sc = scenario_from_dict(data)
    lane = sc.network.get(1)
    assert lane.centerline[0] == pytest.approx([0.0, -1.75])
    assert lane.direction_at(30.0, -1.0) == pytest.approx(0.0, abs=1e-12)


def test_drivable_area_merges_adjacent_lanelets(straight_scenario):
    area = straight_scenario.network.drivable_area
    assert len(area) == 1  # the two lanes fuse into one polygon
    assert area.area == pytest.approx(120.0 * 7.0, rel=1e-9)
    assert straight_scenario.network.speed_limit_at(30.0, 1.0) == pytest.approx(13.0)


def test_lanelets_containing_point(straight_scenario):
    ids = sorted(l.id for l in straight_scenario.network.lanelets_containing(30.0, 0.0))
    assert ids == [1, 2]  # shared boundary belongs to both
