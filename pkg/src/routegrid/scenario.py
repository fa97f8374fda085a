"""Scenario files: parsing, validation, world building, geometry emission.

A scenario is a strict JSON document: resolution, routes (polylines with
per-route speed limit and priority), a spawn schedule, engine parameter
overrides, and decorative intersection pads. Unknown fields are rejected so
typos fail loudly. Parsing is split from building: parse_scenario gives a
validated Scenario value, build_world turns it into a registered WorldMap
plus the spawn schedule.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

from .canonical import dumps_canonical_bytes
from .engine import SimParams
from .errors import ParseError, SchemaError, ValidationError
from .model import (
    VEHICLE_CLASSES,
    GridCoord,
    Route,
    Segment,
    WorldMap,
    quantize,
    register_route,
)


@dataclass
class RouteSpec:
    id: int
    polyline: List[Tuple[float, float]]
    lane_width: float
    thickness: float
    speed_limit: float
    priority_rank: int


@dataclass
class SpawnSpec:
    tick: int
    route_id: int
    vclass: str
    desired_speed: float


@dataclass
class PadSpec:
    center: Tuple[float, float]
    width: float
    length: float


@dataclass
class Scenario:
    resolution: float
    routes: List[RouteSpec]
    spawns: List[SpawnSpec] = field(default_factory=list)
    params: SimParams = field(default_factory=SimParams)
    intersection_pads: List[PadSpec] = field(default_factory=list)


_PARAM_FIELDS = {
    "tick_dt": float,
    "lookahead_horizon": float,
    "intersection_horizon": float,
    "aging_enabled": bool,
    "aging_max_wait": int,
    "accel_limit": float,
    "seed": int,
}


def _need(obj: dict, name: str, path: str):
    if name not in obj:
        raise SchemaError(f"missing field {path}.{name}", field=f"{path}.{name}")
    return obj[name]


def _no_extras(obj: dict, allowed, path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise SchemaError(f"unknown field {path}.{key}", field=f"{path}.{key}")


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{path} must be a number", field=path)
    if not math.isfinite(value):
        raise SchemaError(f"{path} must be finite", field=path)
    return float(value)


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{path} must be an integer", field=path)
    return value


def _str(value, path: str) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"{path} must be a string", field=path)
    return value


def _pair(value, path: str) -> Tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise SchemaError(f"{path} must be a [x, y] pair", field=path)
    return (_num(value[0], f"{path}[0]"), _num(value[1], f"{path}[1]"))


def parse_scenario(text) -> Scenario:
    """Parse and fully validate a scenario document.

    Accepts bytes or str. Malformed JSON raises ParseError with line and
    column; structural problems (unknown, missing, mistyped fields) raise
    SchemaError naming the field; semantic problems (duplicate ids, bad
    ranges, dangling references) raise ValidationError naming the field.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"scenario is not UTF-8: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, line=e.lineno, column=e.colno) from e
    if not isinstance(doc, dict):
        raise SchemaError("scenario root must be an object", field="")
    _no_extras(
        doc,
        ("resolution", "routes", "spawns", "params", "intersection_pads"),
        "scenario",
    )

    resolution = _num(_need(doc, "resolution", "scenario"), "resolution")
    if resolution <= 0.0:
        raise ValidationError("resolution must be > 0", field="resolution")

    raw_routes = _need(doc, "routes", "scenario")
    if not isinstance(raw_routes, list):
        raise SchemaError("routes must be an array", field="routes")
    routes: List[RouteSpec] = []
    seen_ids: Dict[int, int] = {}
    for n, raw in enumerate(raw_routes):
        path = f"routes[{n}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{path} must be an object", field=path)
        _no_extras(
            raw,
            ("id", "polyline", "lane_width", "thickness", "speed_limit", "priority_rank"),
            path,
        )
        rid = _int(_need(raw, "id", path), f"{path}.id")
        if rid in seen_ids:
            raise ValidationError(
                f"route id {rid} already used by routes[{seen_ids[rid]}]",
                field=f"{path}.id",
            )
        seen_ids[rid] = n
        raw_poly = _need(raw, "polyline", path)
        if not isinstance(raw_poly, list):
            raise SchemaError(f"{path}.polyline must be an array", field=f"{path}.polyline")
        poly = [_pair(p, f"{path}.polyline[{k}]") for k, p in enumerate(raw_poly)]
        if len(poly) < 2:
            raise ValidationError(
                "polyline needs at least 2 vertices", field=f"{path}.polyline"
            )
        lane_width = _num(_need(raw, "lane_width", path), f"{path}.lane_width")
        thickness = _num(_need(raw, "thickness", path), f"{path}.thickness")
        speed_limit = _num(_need(raw, "speed_limit", path), f"{path}.speed_limit")
        rank = _int(_need(raw, "priority_rank", path), f"{path}.priority_rank")
        if lane_width <= 0.0:
            raise ValidationError("lane_width must be > 0", field=f"{path}.lane_width")
        if thickness <= 0.0:
            raise ValidationError("thickness must be > 0", field=f"{path}.thickness")
        if speed_limit <= 0.0:
            raise ValidationError("speed_limit must be > 0", field=f"{path}.speed_limit")
        routes.append(RouteSpec(rid, poly, lane_width, thickness, speed_limit, rank))

    spawns: List[SpawnSpec] = []
    raw_spawns = doc.get("spawns", [])
    if not isinstance(raw_spawns, list):
        raise SchemaError("spawns must be an array", field="spawns")
    for n, raw in enumerate(raw_spawns):
        path = f"spawns[{n}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{path} must be an object", field=path)
        _no_extras(raw, ("tick", "route_id", "class", "desired_speed"), path)
        tick = _int(_need(raw, "tick", path), f"{path}.tick")
        route_id = _int(_need(raw, "route_id", path), f"{path}.route_id")
        vclass = _str(_need(raw, "class", path), f"{path}.class")
        desired = _num(_need(raw, "desired_speed", path), f"{path}.desired_speed")
        if tick < 0:
            raise ValidationError("spawn tick must be >= 0", field=f"{path}.tick")
        if route_id not in seen_ids:
            raise ValidationError(
                f"spawn references unknown route {route_id}", field=f"{path}.route_id"
            )
        if vclass not in VEHICLE_CLASSES:
            raise ValidationError(
                f"unknown vehicle class {vclass!r}", field=f"{path}.class"
            )
        if desired < 0.0:
            raise ValidationError(
                "desired_speed must be >= 0", field=f"{path}.desired_speed"
            )
        spawns.append(SpawnSpec(tick, route_id, vclass, desired))

    raw_params = doc.get("params", {})
    if not isinstance(raw_params, dict):
        raise SchemaError("params must be an object", field="params")
    _no_extras(raw_params, tuple(_PARAM_FIELDS), "params")
    overrides = {}
    for name, want in _PARAM_FIELDS.items():
        if name not in raw_params:
            continue
        value = raw_params[name]
        path = f"params.{name}"
        if name == "accel_limit":
            overrides[name] = None if value is None else _num(value, path)
        elif want is bool:
            if not isinstance(value, bool):
                raise SchemaError(f"{path} must be a boolean", field=path)
            overrides[name] = value
        elif want is int:
            overrides[name] = _int(value, path)
        else:
            overrides[name] = _num(value, path)
    params = replace(SimParams(), **overrides)
    params.validate()

    pads: List[PadSpec] = []
    raw_pads = doc.get("intersection_pads", [])
    if not isinstance(raw_pads, list):
        raise SchemaError("intersection_pads must be an array", field="intersection_pads")
    for n, raw in enumerate(raw_pads):
        path = f"intersection_pads[{n}]"
        if not isinstance(raw, dict):
            raise SchemaError(f"{path} must be an object", field=path)
        _no_extras(raw, ("center", "width", "length"), path)
        center = _pair(_need(raw, "center", path), f"{path}.center")
        width = _num(_need(raw, "width", path), f"{path}.width")
        length = _num(_need(raw, "length", path), f"{path}.length")
        if width <= 0.0:
            raise ValidationError("pad width must be > 0", field=f"{path}.width")
        if length <= 0.0:
            raise ValidationError("pad length must be > 0", field=f"{path}.length")
        pads.append(PadSpec(center, width, length))

    return Scenario(resolution, routes, spawns, params, pads)


def load_scenario(path: str) -> Scenario:
    with open(path, "rb") as f:
        return parse_scenario(f.read())


def _resample(spec: RouteSpec, resolution: float) -> List[Segment]:
    """Sample the polyline at arc steps of the resolution and quantize.

    Consecutive samples landing on the same grid cell collapse to one
    segment (diagonals); the quantized endpoint is appended when the last
    arc step falls short of it.
    """
    pts = spec.polyline
    seg_len: List[float] = []
    heads: List[float] = []
    for a, b in zip(pts, pts[1:]):
        dx = b[0] - a[0]
        dy = b[1] - a[1]
        seg_len.append(math.hypot(dx, dy))
        heads.append(math.atan2(dy, dx))
    total = sum(seg_len)
    if total <= 0.0:
        raise ValidationError(
            f"route {spec.id} polyline has zero length", field="polyline"
        )

    picked: List[Tuple[GridCoord, float]] = []

    def push(coord: GridCoord, heading: float) -> None:
        if not picked or picked[-1][0] != coord:
            picked.append((coord, heading))

    n_samples = int(math.floor(total / resolution + 1e-9)) + 1
    piece = 0
    consumed = 0.0
    for k in range(n_samples):
        s = k * resolution
        while piece < len(seg_len) - 1 and s > consumed + seg_len[piece] + 1e-12:
            consumed += seg_len[piece]
            piece += 1
        frac = (s - consumed) / seg_len[piece] if seg_len[piece] > 0 else 0.0
        frac = min(max(frac, 0.0), 1.0)
        a = pts[piece]
        b = pts[piece + 1]
        x = a[0] + (b[0] - a[0]) * frac
        y = a[1] + (b[1] - a[1]) * frac
        push(quantize(x, y, resolution), heads[piece])
    end = quantize(pts[-1][0], pts[-1][1], resolution)
    push(end, heads[-1])

    segments: List[Segment] = []
    for k, (coord, heading) in enumerate(picked):
        segments.append(
            Segment(
                route_id=spec.id,
                seq_index=k,
                position=coord,
                prev_position=picked[k - 1][0] if k > 0 else None,
                next_position=picked[k + 1][0] if k + 1 < len(picked) else None,
                scale=(spec.lane_width, resolution, spec.thickness),
                rotation=heading,
                speed_limit=spec.speed_limit,
            )
        )
    return segments


def build_world(scenario: Scenario) -> Tuple[WorldMap, List[SpawnSpec]]:
    """Build and register the world; returns it with the spawn schedule.

    Routes register in (priority_rank, id) order; overlap violations
    propagate as IllegalOverlap naming both routes and the shared point.
    """
    world = WorldMap(resolution=scenario.resolution, points={}, routes={})
    for spec in sorted(scenario.routes, key=lambda r: (r.priority_rank, r.id)):
        segments = _resample(spec, scenario.resolution)
        route = Route(id=spec.id, segments=segments, priority_rank=spec.priority_rank)
        register_route(world, route, spec.priority_rank)
    return world, list(scenario.spawns)


def emit_line_segments(world: WorldMap, pads: Sequence[PadSpec] = ()) -> bytes:
    """Canonical geometry document: every segment as position/rotation/scale.

    Entries are ordered by (route id, seq_index); rotation is degrees;
    floats are fixed 6-decimal; byte-identical across runs for one world.
    """
    segments = []
    for rid in sorted(world.routes):
        for seg in world.routes[rid].segments:
            x, y = seg.position.to_world(world.resolution)
            segments.append(
                {
                    "position": [x, y, 0.0],
                    "rotation": math.degrees(seg.rotation),
                    "scale": [seg.scale[0], seg.scale[1], seg.scale[2]],
                }
            )
    doc = {
        "intersection_pads": [
            {
                "center": [p.center[0], p.center[1]],
                "length": p.length,
                "width": p.width,
            }
            for p in pads
        ],
        "segments": segments,
    }
    return dumps_canonical_bytes(doc)


def scenario_to_obj(scenario: Scenario) -> dict:
    p = scenario.params
    return {
        "resolution": scenario.resolution,
        "routes": [
            {
                "id": r.id,
                "polyline": [[x, y] for x, y in r.polyline],
                "lane_width": r.lane_width,
                "thickness": r.thickness,
                "speed_limit": r.speed_limit,
                "priority_rank": r.priority_rank,
            }
            for r in scenario.routes
        ],
        "spawns": [
            {
                "tick": s.tick,
                "route_id": s.route_id,
                "class": s.vclass,
                "desired_speed": s.desired_speed,
            }
            for s in scenario.spawns
        ],
        "params": {
            "tick_dt": p.tick_dt,
            "lookahead_horizon": p.lookahead_horizon,
            "intersection_horizon": p.intersection_horizon,
            "aging_enabled": p.aging_enabled,
            "aging_max_wait": p.aging_max_wait,
            "accel_limit": p.accel_limit,
            "seed": p.seed,
        },
        "intersection_pads": [
            {"center": [p_.center[0], p_.center[1]], "width": p_.width, "length": p_.length}
            for p_ in scenario.intersection_pads
        ],
    }


def emit_scenario(scenario: Scenario) -> bytes:
    """Lossless canonical dump with defaults expanded; reparses to an equal
    Scenario. Uses shortest round-trip float rendering, not fixed decimals,
    so parameter values survive exactly."""
    obj = scenario_to_obj(scenario)
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("ascii")
