"""Car following and forward sweeps.

The movement rule is a catch-up model: a vehicle cruises at its own speed
unless it would reach the rear bumper of its leader within the decision
horizon; in that case it rides at its own speed until the catch instant and
at the leader's speed for the rest of the horizon, adopting the leader's
speed. All functions here are pure.
"""

from __future__ import annotations

import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

from .errors import InvalidKinematics
from .model import GridCoord, Vehicle, WorldMap


class LaneFollowDecision(NamedTuple):
    """Outcome of one horizon of car following."""

    advance: float
    new_speed: float


def lane_follow(
    myspeed: float,
    leader: Optional[Tuple[float, float]],
    horizon: float,
) -> LaneFollowDecision:
    """Decide how far to move over one horizon and the speed afterwards.

    leader is (dist, frontspeed): bumper gap to the leader's rear and the
    leader's speed, or None when nothing is within range. With no leader, or
    a leader that is not closing (speed difference <= 0), or a catch time
    dist/(myspeed - frontspeed) outside (0, horizon), the vehicle cruises:
    advance = myspeed * horizon, speed unchanged. When the catch time t falls
    inside the horizon, advance = myspeed * t + frontspeed * (horizon - t)
    and the vehicle adopts frontspeed. A leader already at gap 0 caps the
    whole horizon to frontspeed.

    Raises InvalidKinematics for negative speeds or distance, or a
    non-positive horizon.
    """
    if myspeed < 0.0:
        raise InvalidKinematics(f"negative speed {myspeed}")
    if horizon <= 0.0:
        raise InvalidKinematics(f"horizon must be > 0, got {horizon}")
    if leader is None:
        return LaneFollowDecision(myspeed * horizon, myspeed)
    dist, frontspeed = leader
    if dist < 0.0:
        raise InvalidKinematics(f"negative leader distance {dist}")
    if frontspeed < 0.0:
        raise InvalidKinematics(f"negative leader speed {frontspeed}")
    dv = myspeed - frontspeed
    if dv <= 0.0:
        return LaneFollowDecision(myspeed * horizon, myspeed)
    if dist == 0.0:
        return LaneFollowDecision(frontspeed * horizon, frontspeed)
    t = dist / dv
    if t >= horizon:
        return LaneFollowDecision(myspeed * horizon, myspeed)
    return LaneFollowDecision(myspeed * t + frontspeed * (horizon - t), frontspeed)


def find_leader(
    vehicles: Sequence[Vehicle],
    v: Vehicle,
    search_range: float,
) -> Optional[Tuple[float, float]]:
    """Nearest active vehicle ahead of v on the same route, within range.

    Returns (gap, leader_speed) where gap is the distance from v's front
    bumper to the leader's rear bumper, floored at 0, or None when no leader
    is within search_range.
    """
    best: Optional[Vehicle] = None
    for u in vehicles:
        if u is v or not u.active or u.route_id != v.route_id:
            continue
        if u.arc_pos <= v.arc_pos:
            continue
        if best is None or (u.arc_pos, u.id) < (best.arc_pos, best.id):
            best = u
    if best is None:
        return None
    gap = (best.arc_pos - best.footprint_length) - v.arc_pos
    if gap < 0.0:
        gap = 0.0
    if gap > search_range:
        return None
    return (gap, best.speed)


def swept_cells(
    arc_pos: float,
    speed: float,
    footprint_length: float,
    horizon: float,
    resolution: float,
    n_cells: int,
) -> Tuple[int, int]:
    """Inclusive cell-index window [lo, hi] covered by a forward sweep.

    The sweep is the arc interval [arc_pos, arc_pos + speed * horizon +
    footprint_length], clipped to the route. Returns lo > hi when the window
    contains no cell sample.
    """
    end = arc_pos + speed * horizon + footprint_length
    lo = int(math.ceil(arc_pos / resolution))
    hi = int(math.floor(end / resolution))
    if lo < 0:
        lo = 0
    if hi > n_cells - 1:
        hi = n_cells - 1
    return lo, hi


def swept_points(world: WorldMap, v: Vehicle, horizon: float) -> List[GridCoord]:
    """Grid points of v's route its sweep covers, ordered by increasing arc."""
    route = world.route(v.route_id)
    lo, hi = swept_cells(
        v.arc_pos, v.speed, v.footprint_length, horizon,
        world.resolution, len(route.segments),
    )
    return [route.segments[k].position for k in range(lo, hi + 1)]


def footprint_cells(
    arc_pos: float,
    footprint_length: float,
    resolution: float,
    n_cells: int,
) -> Tuple[int, int]:
    """Inclusive cell-index window [lo, hi] covered by a vehicle body.

    The body is the half-open arc interval (arc_pos - footprint_length,
    arc_pos]: open at the rear so two vehicles touching at gap 0 do not share
    a cell, closed at the front so a vehicle at arc 0 occupies the entry
    cell.
    """
    lo = int(math.floor((arc_pos - footprint_length) / resolution)) + 1
    hi = int(math.floor(arc_pos / resolution))
    if lo < 0:
        lo = 0
    if hi > n_cells - 1:
        hi = n_cells - 1
    return lo, hi
