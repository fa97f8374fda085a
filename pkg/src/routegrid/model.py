"""World model: a grid-quantized map of routes, points, and vehicles.

The world is a uniform grid with spacing ``resolution`` (meters). A grid
coordinate (i, j) names the world position (i * resolution, j * resolution).
Routes are ordered chains of segments, one segment per grid cell, each
``resolution`` meters of arc long. Points are the per-cell records shared by
all routes passing through that cell; their ``route_ls`` lists route ids in
crossing-priority order (first entry goes first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Tuple

from .errors import (
    AmbiguousPoint,
    DuplicateRoute,
    IllegalOverlap,
    InvalidCoordinate,
    NoSuchPoint,
    NoSuchRoute,
    NotOnRoute,
    ValidationError,
)


class GridCoord(NamedTuple):
    """Integer grid cell. Compares and hashes exactly (no float fuzz)."""

    i: int
    j: int

    def to_world(self, resolution: float) -> Tuple[float, float]:
        return (self.i * resolution, self.j * resolution)


def _round_half_away(v: float) -> int:
    # round-half-away-from-zero, unlike Python's bankers rounding
    if v >= 0.0:
        return int(math.floor(v + 0.5))
    return int(math.ceil(v - 0.5))


def quantize(x: float, y: float, resolution: float) -> GridCoord:
    """Snap a world position to its grid cell.

    Cell index = round(coord / resolution) with halves rounded away from
    zero, so (0.25, 0.25) at resolution 0.5 lands on cell (1, 1). Raises
    InvalidCoordinate for non-finite inputs or a non-positive resolution.
    """
    if not (math.isfinite(x) and math.isfinite(y)):
        raise InvalidCoordinate(f"non-finite position ({x}, {y})")
    if not (math.isfinite(resolution) and resolution > 0.0):
        raise InvalidCoordinate(f"resolution must be finite and > 0, got {resolution}")
    return GridCoord(_round_half_away(x / resolution), _round_half_away(y / resolution))


@dataclass
class Segment:
    """One grid cell of one route.

    scale is (lane_width, length, thickness); length always equals the world
    resolution. rotation is the lane heading in radians, counterclockwise
    from +x. car_id is occupancy and is the only mutable field after world
    construction.
    """

    route_id: int
    seq_index: int
    position: GridCoord
    prev_position: Optional[GridCoord]
    next_position: Optional[GridCoord]
    scale: Tuple[float, float, float]
    rotation: float
    speed_limit: float
    car_id: Optional[int] = None


@dataclass
class PointRecord:
    """Per-cell record shared by every route through the cell.

    route_ls is the crossing-priority order: earlier entries cross first.
    car_id, when set, names a vehicle whose quantized footprint covers the
    cell right now.
    """

    position: GridCoord
    route_ls: List[int] = field(default_factory=list)
    car_id: Optional[int] = None


@dataclass
class Route:
    """Ordered chain of segments. seq_index runs 0..len-1 without gaps."""

    id: int
    segments: List[Segment]
    by_position: Dict[GridCoord, int] = field(default_factory=dict)
    priority_rank: int = 0

    def __post_init__(self) -> None:
        if not self.by_position and self.segments:
            self.by_position = {s.position: s.seq_index for s in self.segments}

    def arc_length(self, resolution: float) -> float:
        return len(self.segments) * resolution

    def validate(self, resolution: float) -> None:
        """Raise ValidationError unless the chain invariants hold."""
        if not self.segments:
            raise ValidationError(f"route {self.id} has no segments")
        seen = set()
        for k, seg in enumerate(self.segments):
            if seg.seq_index != k:
                raise ValidationError(f"route {self.id} segment {k} has seq_index {seg.seq_index}")
            if seg.route_id != self.id:
                raise ValidationError(f"route {self.id} segment {k} carries route_id {seg.route_id}")
            if seg.position in seen:
                raise ValidationError(f"route {self.id} visits {seg.position} twice")
            seen.add(seg.position)
            if seg.speed_limit <= 0.0:
                raise ValidationError(f"route {self.id} segment {k} speed_limit must be > 0")
            if seg.scale[1] != resolution:
                raise ValidationError(
                    f"route {self.id} segment {k} length {seg.scale[1]} != resolution {resolution}"
                )
            want_prev = self.segments[k - 1].position if k > 0 else None
            want_next = self.segments[k + 1].position if k + 1 < len(self.segments) else None
            if seg.prev_position != want_prev or seg.next_position != want_next:
                raise ValidationError(f"route {self.id} chain links broken at seq_index {k}")
        if self.by_position != {s.position: s.seq_index for s in self.segments}:
            raise ValidationError(f"route {self.id} by_position map out of sync")


@dataclass
class WorldMap:
    """The static world: grid resolution, point registry, route registry."""

    resolution: float
    points: Dict[GridCoord, PointRecord] = field(default_factory=dict)
    routes: Dict[int, Route] = field(default_factory=dict)

    def route(self, route_id: int) -> Route:
        try:
            return self.routes[route_id]
        except KeyError:
            raise NoSuchRoute(f"no route {route_id} in world") from None


VEHICLE_CLASSES = ("car", "bus", "police")

# Body length along the route, meters. Fixed per class.
FOOTPRINT_LENGTH = {"car": 4.0, "bus": 10.0, "police": 4.8}


@dataclass
class Vehicle:
    """A vehicle bound to one route for its whole life.

    arc_pos is the front bumper's distance along the route (meters); the body
    extends footprint_length behind it. wait_ticks counts consecutive ticks
    spent held at an intersection.
    """

    id: int
    vclass: str
    route_id: int
    arc_pos: float
    speed: float
    desired_speed: float
    active: bool = True
    footprint_length: float = 4.0
    wait_ticks: int = 0


def register_route(
    world: WorldMap,
    route: Route,
    priority_rank: int,
    max_shared_run: int = 2,
) -> None:
    """Add a route to the world and slot it into point priority lists.

    The route's id enters each point's route_ls ordered by
    (priority_rank, route id) against the routes already registered, so
    registration order does not matter. Routes may overlap an existing route
    on at most max_shared_run consecutive points (a crossing or a merge
    node); longer shared runs raise IllegalOverlap. Registration is
    all-or-nothing: on error the world is unchanged.
    """
    if route.id in world.routes:
        raise DuplicateRoute(f"route {route.id} already registered")
    route.validate(world.resolution)

    # dry pass: per-neighbor consecutive shared-run lengths along the new chain
    runs: Dict[int, int] = {}
    for seg in route.segments:
        rec = world.points.get(seg.position)
        here = set(rec.route_ls) if rec else set()
        for other in here:
            n = runs.get(other, 0) + 1
            if n > max_shared_run:
                raise IllegalOverlap(
                    f"route {route.id} shares more than {max_shared_run} consecutive "
                    f"points with route {other} at {seg.position}"
                )
            runs[other] = n
        for other in list(runs):
            if other not in here:
                del runs[other]

    route.priority_rank = priority_rank
    key = (priority_rank, route.id)
    for seg in route.segments:
        rec = world.points.get(seg.position)
        if rec is None:
            rec = PointRecord(position=seg.position, route_ls=[])
            world.points[seg.position] = rec
        idx = 0
        for existing in rec.route_ls:
            other = world.routes[existing]
            if (other.priority_rank, other.id) < key:
                idx += 1
            else:
                break
        rec.route_ls.insert(idx, route.id)
    world.routes[route.id] = route


def segment_by_route(world: WorldMap, route_id: int, position: GridCoord) -> Segment:
    """O(1) lookup of the given route's segment at a grid cell."""
    route = world.route(route_id)
    idx = route.by_position.get(position)
    if idx is None:
        raise NotOnRoute(f"route {route_id} has no segment at {position}")
    return route.segments[idx]


def segment_by_point(
    world: WorldMap, position: GridCoord, route_id: Optional[int] = None
) -> Segment:
    """Look up the segment at a cell, disambiguating shared cells by route.

    A cell used by several routes needs route_id; without it the lookup
    raises AmbiguousPoint. An unused cell raises NoSuchPoint.
    """
    rec = world.points.get(position)
    if rec is None:
        raise NoSuchPoint(f"no point at {position}")
    if route_id is not None:
        if route_id not in rec.route_ls:
            raise NotOnRoute(f"route {route_id} does not pass through {position}")
        return segment_by_route(world, route_id, position)
    if len(rec.route_ls) > 1:
        raise AmbiguousPoint(
            f"{position} is shared by routes {rec.route_ls}; pass route_id"
        )
    return segment_by_route(world, rec.route_ls[0], position)


def route_position_at_arc(
    world: WorldMap, route: Route, arc: float
) -> Tuple[float, float]:
    """Continuous world position at an arc offset along the quantized chain.

    Positions interpolate linearly between consecutive segment cells; past
    the last cell the chain extrapolates along the final heading (the last
    segment covers [len-1, len) * resolution of arc).
    """
    rho = world.resolution
    n = len(route.segments)
    k = int(arc / rho)
    if k < 0:
        k = 0
    if k >= n:
        k = n - 1
    frac = arc / rho - k
    x0, y0 = route.segments[k].position.to_world(rho)
    if k + 1 < n:
        x1, y1 = route.segments[k + 1].position.to_world(rho)
        return (x0 + (x1 - x0) * frac, y0 + (y1 - y0) * frac)
    rot = route.segments[k].rotation
    return (x0 + math.cos(rot) * frac * rho, y0 + math.sin(rot) * frac * rho)


def route_heading_at_arc(world: WorldMap, route: Route, arc: float) -> float:
    """Lane heading (radians, CCW from +x) of the segment containing arc."""
    rho = world.resolution
    n = len(route.segments)
    k = int(arc / rho)
    if k < 0:
        k = 0
    if k >= n:
        k = n - 1
    return route.segments[k].rotation
