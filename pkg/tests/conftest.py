"""Shared fixture builders for the test suite."""

import numpy as np
import pytest

from occlusim.scenario import scenario_from_dict


def straight_road_dict(
    length=120.0,
    half_width=3.5,
    ego_x=5.0,
    ego_v=8.0,
    speed_limit=13.0,
    horizon_steps=31,
    dt=0.1,
    sensor_range=50.0,
):
    """Two-lane straight road along +x, ego in the right lane at y = -half_width/2."""
    n = int(length // 10) + 1
    xs = np.linspace(0.0, length, n)

    def line(y):
        return [[float(x), float(y)] for x in xs]

    return {
        "meta": {"name": "straight", "dt": dt, "horizon_steps": horizon_steps},
        "lanelets": [
            {
                "id": 1,
                "left": line(0.0),
                "right": line(-half_width),
                "successors": [],
                "adj_left": 2,
                "speed_limit": speed_limit,
            },
            {
                "id": 2,
                "left": line(half_width),
                "right": line(0.0),
                "successors": [],
                "adj_right": 1,
                "speed_limit": speed_limit,
            },
        ],
        "static_obstacles": [],
        "dynamic_obstacles": [],
        "ego": {
            "initial": {"x": ego_x, "y": -half_width / 2, "theta": 0.0, "v": ego_v},
            "params": {
                "length": 4.5,
                "width": 2.0,
                "wheelbase": 2.7,
                "sensor_range": sensor_range,
                "a_max": 8.0,
                "v_max": 13.0,
            },
            "reference_path": [[0.0, -half_width / 2], [length, -half_width / 2]],
            "goal_s": length - 45.0,
        },
    }


def stopped_car_states(x, y, theta, n):
    return [{"t": round(k * 0.1, 6), "x": x, "y": y, "theta": theta, "v": 0.0} for k in range(n)]


def moving_states(x0, y0, theta, v, n, dt=0.1):
    c, s = np.cos(theta), np.sin(theta)
    return [
        {"t": round(k * dt, 6), "x": x0 + v * k * dt * c, "y": y0 + v * k * dt * s, "theta": theta, "v": v}
        for k in range(n)
    ]


@pytest.fixture
def straight_scenario():
    return scenario_from_dict(straight_road_dict())
