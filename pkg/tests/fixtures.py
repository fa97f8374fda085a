"""Scenario builders shared across the test suite.

All builders return parsed Scenario objects by round-tripping a plain dict
through the scenario parser, so every test run also exercises parsing.
"""

import json
from typing import List, Optional, Sequence, Tuple

from routegrid import Scenario, parse_scenario


def make_scenario(obj: dict) -> Scenario:
    return parse_scenario(json.dumps(obj))


def route(rid: int, polyline, rank: int, limit: float = 14.0,
          lane_width: float = 3.5, thickness: float = 0.1) -> dict:
    return {
        "id": rid,
        "polyline": [[float(x), float(y)] for x, y in polyline],
        "lane_width": lane_width,
        "thickness": thickness,
        "speed_limit": limit,
        "priority_rank": rank,
    }


def spawn(tick: int, route_id: int, vclass: str, desired: float) -> dict:
    return {"tick": tick, "route_id": route_id, "class": vclass,
            "desired_speed": desired}


def straight_scenario(length: float = 60.0, limit: float = 14.0,
                      spawns: Optional[Sequence[dict]] = None,
                      resolution: float = 0.5, params: Optional[dict] = None) -> Scenario:
    obj = {
        "resolution": resolution,
        "routes": [route(0, [(0.0, 0.0), (length, 0.0)], 0, limit)],
        "spawns": list(spawns) if spawns is not None
        else [spawn(0, 0, "car", 10.0)],
    }
    if params:
        obj["params"] = params
    return make_scenario(obj)


def crossing_scenario(spawn_a: int = 0, spawn_b: int = 0,
                      speed_a: float = 12.0, speed_b: float = 10.0,
                      class_a: str = "car", class_b: str = "car",
                      arm: float = 40.0, params: Optional[dict] = None) -> Scenario:
    """Two perpendicular routes sharing exactly the origin cell.

    Route 0 runs west to east along y=0 with rank 0; route 1 runs south to
    north along x=0 with rank 1. Spawn ticks and speeds are parameters so
    priority tests can randomize approach timings.
    """
    obj = {
        "resolution": 0.5,
        "routes": [
            route(0, [(-arm, 0.0), (arm, 0.0)], 0),
            route(1, [(0.0, -arm), (0.0, arm)], 1),
        ],
        "spawns": [
            spawn(spawn_a, 0, class_a, speed_a),
            spawn(spawn_b, 1, class_b, speed_b),
        ],
        "intersection_pads": [
            {"center": [0.0, 0.0], "width": 10.0, "length": 10.0}
        ],
    }
    if params:
        obj["params"] = params
    return make_scenario(obj)


def four_way_scenario(n_vehicles: int = 20, ticks_span: int = 6000,
                      params: Optional[dict] = None) -> Scenario:
    """Four-way junction with 12 routes: 4 throughs, 4 right turns, 4 left
    turns, every movement on its own lane so routes only ever cross.

    Right-hand traffic. Through lanes sit 2 m from the centreline, left-turn
    lanes 1 m, right-turn lanes 3 m; turn exits land on dedicated lanes so
    no two routes share a linear run.
    """
    arm = 60.0
    throughs = [
        route(0, [(2, -arm), (2, arm)], 0),       # south -> north
        route(1, [(-2, arm), (-2, -arm)], 0),     # north -> south
        route(2, [(-arm, -2), (arm, -2)], 0),     # west -> east
        route(3, [(arm, 2), (-arm, 2)], 0),       # east -> west
    ]
    rights = [
        route(4, [(3, -arm), (3, -6), (6, -3), (arm, -3)], 1),    # S -> E
        route(5, [(-3, arm), (-3, 6), (-6, 3), (-arm, 3)], 1),    # N -> W
        route(6, [(-arm, -3), (-6, -3), (-3, -6), (-3, -arm)], 1),  # W -> S
        route(7, [(arm, 3), (6, 3), (3, 6), (3, arm)], 1),        # E -> N
    ]
    lefts = [
        route(8, [(1, -arm), (1, -4), (-4, 1), (-arm, 1)], 2),    # S -> W
        route(9, [(-1, arm), (-1, 4), (4, -1), (arm, -1)], 2),    # N -> E
        route(10, [(-arm, -1), (-4, -1), (1, 4), (1, arm)], 2),   # W -> N
        route(11, [(arm, 1), (4, 1), (-1, -4), (-1, -arm)], 2),   # E -> S
    ]
    schedule: List[Tuple[int, str, float]] = []
    classes = ("car", "bus", "car", "police", "car", "car", "bus", "car")
    speeds = (12.0, 9.0, 13.0, 14.0, 10.0, 11.0, 8.0, 12.5)
    # two waves over the through and left routes, one vehicle per right turn
    wave_routes = [0, 1, 2, 3, 8, 9, 10, 11]
    k = 0
    for wave in range(2):
        for rid in wave_routes:
            tick = (wave * ticks_span) // 2 + (k % 8) * 37
            schedule.append((tick, rid, classes[k % 8], speeds[k % 8]))
            k += 1
    for rid in (4, 5, 6, 7):
        schedule.append(((k % 8) * 53 + 200, rid, classes[k % 8], speeds[k % 8]))
        k += 1
    schedule = schedule[:n_vehicles]
    obj = {
        "resolution": 0.5,
        "routes": throughs + rights + lefts,
        "spawns": [spawn(t, rid, cls, sp) for t, rid, cls, sp in
                   sorted(schedule, key=lambda s: (s[0], s[1]))],
        "intersection_pads": [
            {"center": [0.0, 0.0], "width": 16.0, "length": 16.0}
        ],
    }
    if params:
        obj["params"] = params
    return make_scenario(obj)


def parallel_scenario(n_routes: int, per_route: int, length: float = 1000.0,
                      spacing_ticks: int = 52, limit: float = 14.0,
                      params: Optional[dict] = None) -> Scenario:
    """n_routes disjoint parallel straights, per_route vehicles on each.

    No route shares a point with any other, so there are no conflicts and
    the fixture isolates car following plus raw stepping cost.
    """
    routes = [
        route(r, [(0.0, 4.0 * r), (length, 4.0 * r)], 0, limit)
        for r in range(n_routes)
    ]
    spawns = []
    for r in range(n_routes):
        for k in range(per_route):
            spawns.append(spawn(k * spacing_ticks, r, "car", limit))
    obj = {"resolution": 0.5, "routes": routes, "spawns": spawns}
    if params:
        obj["params"] = params
    return make_scenario(obj)


def starvation_scenario(aging_enabled: bool, aging_max_wait: int = 24,
                        ticks: int = 600, main_every: int = 12) -> Scenario:
    """Saturated rank-0 main road crossing a single rank-1 side vehicle.

    The main stream spawns often enough that successive sweeps cover the
    shared cell continuously, so the side vehicle can only cross once aging
    promotes it (or never, with aging off).
    """
    n_main = ticks // main_every
    spawns = [spawn(k * main_every, 0, "car", 13.0) for k in range(n_main)]
    spawns.append(spawn(0, 1, "car", 10.0))
    # side approach is long enough that the main stream already covers the
    # shared cell continuously by the time the side vehicle gets there
    obj = {
        "resolution": 0.5,
        "routes": [
            route(0, [(-120.0, 0.0), (120.0, 0.0)], 0),
            route(1, [(0.0, -80.0), (0.0, 40.0)], 1, 10.0),
        ],
        "spawns": sorted(spawns, key=lambda s: (s["tick"], s["route_id"])),
        "params": {
            "aging_enabled": aging_enabled,
            "aging_max_wait": aging_max_wait,
        },
    }
    return make_scenario(obj)
