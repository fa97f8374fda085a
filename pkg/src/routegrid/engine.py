"""Lockstep simulation engine.

One tick advances every vehicle once, in a fixed deterministic order, by a
fixed time step. Intersection crossing is mediated by per-point priority
lists plus forward sweeps; physical exclusion is enforced by a cell
occupancy gate (a vehicle never moves into a cell another vehicle covers).
Identical inputs produce identical state and event streams, bit for bit.

The Engine keeps vehicle state in flat numpy arrays. Each tick it splits
active vehicles into a free-flow set (no leader within range, no conflict
point in the sweep, not near the route end) applied vectorized, and a slow
set processed sequentially in (route priority, arc descending, id) order.
Free-flow moves provably commute with everything else: their entered cells
lie inside their conflict-free sweep, and same-route neighbors are more than
one lookahead away, which exceeds one tick of travel since tick_dt <=
lookahead_horizon.
"""

from __future__ import annotations

import math
import threading
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import CorruptState, NoSuchRoute, ValidationError
from .follow import (
    find_leader,
    footprint_cells,
    lane_follow,
    swept_cells,
    swept_points,
)
from .model import (
    FOOTPRINT_LENGTH,
    VEHICLE_CLASSES,
    GridCoord,
    PointRecord,
    Vehicle,
    WorldMap,
)

EVENT_SPAWNED = "spawned"
EVENT_DEACTIVATED = "deactivated"
EVENT_HELD = "held_at_intersection"
EVENT_COLLISION = "collision"
EVENT_STARVATION = "starvation_warning"

COMMAND_KINDS = ("set_desired_speed", "hold", "release", "despawn")


@dataclass
class SimParams:
    """Engine tuning. Defaults give a 24 Hz tick with a 1 s lookahead."""

    tick_dt: float = 1.0 / 24.0
    lookahead_horizon: float = 1.0
    intersection_horizon: float = 2.0
    aging_enabled: bool = False
    aging_max_wait: int = 240
    accel_limit: Optional[float] = None
    seed: int = 0

    def validate(self) -> None:
        if not (math.isfinite(self.tick_dt) and self.tick_dt > 0.0):
            raise ValidationError("params.tick_dt must be > 0", field="params.tick_dt")
        if not (self.tick_dt <= self.lookahead_horizon <= self.intersection_horizon):
            raise ValidationError(
                "params must satisfy tick_dt <= lookahead_horizon <= intersection_horizon",
                field="params",
            )
        if self.aging_max_wait < 0:
            raise ValidationError("params.aging_max_wait must be >= 0", field="params.aging_max_wait")
        if self.accel_limit is not None and self.accel_limit <= 0.0:
            raise ValidationError("params.accel_limit must be > 0 when set", field="params.accel_limit")
        if not (0 <= self.seed < 2**64):
            raise ValidationError("params.seed must fit in 64 bits", field="params.seed")


@dataclass(frozen=True)
class SimEvent:
    """Something that happened during one tick."""

    tick: int
    kind: str
    vehicle_ids: Tuple[int, ...]


@dataclass(frozen=True)
class Command:
    """External vehicle command, applied at the next tick boundary."""

    kind: str
    vehicle_id: int
    value: Optional[float] = None
    client_tag: str = ""

    def validate(self) -> None:
        if self.kind not in COMMAND_KINDS:
            raise ValidationError(f"unknown command kind {self.kind!r}", field="kind")
        if self.kind == "set_desired_speed":
            if self.value is None:
                raise ValidationError("set_desired_speed needs a value", field="value")
            if not (math.isfinite(self.value) and self.value >= 0.0):
                raise ValidationError("value must be a finite number >= 0", field="value")
        elif self.value is not None:
            raise ValidationError(f"{self.kind} takes no value", field="value")


@dataclass
class TickResult:
    tick: int
    events: List[SimEvent]
    commands_applied: List[dict]


def _priority_key(rec: PointRecord, route_id: int, v: Vehicle, params: SimParams) -> tuple:
    promoted = params.aging_enabled and v.wait_ticks > params.aging_max_wait
    return (0 if promoted else 1, rec.route_ls.index(route_id), v.id)


def intersection_clear(
    world: WorldMap,
    vehicles: Sequence[Vehicle],
    v: Vehicle,
    params: SimParams,
) -> bool:
    """True iff no shared point in v's sweep is also swept by a vehicle that
    crosses that point with strictly higher priority.

    Priority at a point follows its route_ls order; a vehicle promoted by
    aging (wait_ticks beyond aging_max_wait, aging enabled) outranks every
    unpromoted one. Vehicles on v's own route never block it here; lane
    following handles them.
    """
    shared = [
        world.points[c]
        for c in swept_points(world, v, params.intersection_horizon)
        if len(world.points[c].route_ls) >= 2
    ]
    if not shared:
        return True
    cache: Dict[int, set] = {}
    for rec in shared:
        my_key = _priority_key(rec, v.route_id, v, params)
        for u in vehicles:
            if u is v or not u.active or u.route_id == v.route_id:
                continue
            if u.route_id not in rec.route_ls:
                continue
            if _priority_key(rec, u.route_id, u, params) >= my_key:
                continue
            cells = cache.get(u.id)
            if cells is None:
                cells = set(swept_points(world, u, params.intersection_horizon))
                cache[u.id] = cells
            if rec.position in cells:
                return False
    return True


class _WorldTables:
    """Flat per-route lookup tables derived once from a WorldMap."""

    def __init__(self, world: WorldMap):
        rho = world.resolution
        self.rho = rho
        self.inv_rho = 1.0 / rho
        order = sorted(world.routes.values(), key=lambda r: (r.priority_rank, r.id))
        self.route_ids = [r.id for r in order]
        self.ridx_of = {r.id: i for i, r in enumerate(order)}
        self.rank = np.array([r.priority_rank for r in order], dtype=np.int64)
        self.n_cells = np.array([len(r.segments) for r in order], dtype=np.int64)
        self.offset = np.zeros(len(order), dtype=np.int64)
        if len(order) > 1:
            self.offset[1:] = np.cumsum(self.n_cells[:-1])
        self.arc_len = self.n_cells.astype(np.float64) * rho
        total = int(self.n_cells.sum())
        self.limits = np.empty(total, dtype=np.float64)
        self.rot = np.empty(total, dtype=np.float64)
        self.px = np.empty(total, dtype=np.float64)
        self.py = np.empty(total, dtype=np.float64)
        self.pidx = np.empty(total, dtype=np.int64)
        self.segs: List = [None] * total
        self.point_index: Dict[GridCoord, int] = {}
        self.point_recs: List[PointRecord] = []
        self.flats_of: List[List[int]] = []
        self.next_conflict = np.full(total, np.inf, dtype=np.float64)
        self.conflict_cells: List[List[int]] = []
        self.conflict_ls: List[Dict[int, int]] = []
        for ridx, route in enumerate(order):
            off = int(self.offset[ridx])
            ccells: List[int] = []
            lsmap: Dict[int, int] = {}
            for k, seg in enumerate(route.segments):
                gi = self.point_index.get(seg.position)
                if gi is None:
                    gi = len(self.point_recs)
                    self.point_index[seg.position] = gi
                    self.point_recs.append(world.points[seg.position])
                    self.flats_of.append([])
                f = off + k
                self.flats_of[gi].append(f)
                self.pidx[f] = gi
                self.limits[f] = seg.speed_limit
                self.rot[f] = seg.rotation
                self.px[f], self.py[f] = seg.position.to_world(rho)
                self.segs[f] = seg
                rec = world.points[seg.position]
                if len(rec.route_ls) >= 2:
                    ccells.append(k)
                    lsmap[k] = rec.route_ls.index(route.id)
            self.conflict_cells.append(ccells)
            self.conflict_ls.append(lsmap)
            nxt = math.inf
            for k in range(len(route.segments) - 1, -1, -1):
                if k in lsmap:
                    nxt = k * rho
                self.next_conflict[off + k] = nxt
        self.n_points = len(self.point_recs)
        self.token = (len(world.routes), len(world.points))


def _world_tables(world: WorldMap) -> _WorldTables:
    tables = getattr(world, "_rg_tables", None)
    if tables is None or tables.token != (len(world.routes), len(world.points)):
        tables = _WorldTables(world)
        world._rg_tables = tables
    return tables


_CLASS_CODE = {name: i for i, name in enumerate(VEHICLE_CLASSES)}


def _ranges(starts: np.ndarray, lens: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Flatten per-row integer ranges [start, start+len) into a
    (row_selector, values) pair; rows with empty ranges contribute nothing."""
    mask = lens > 0
    if not mask.any():
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    s = starts[mask]
    l = lens[mask]
    idx = np.repeat(np.arange(l.size), l)
    vals = s[idx] + np.arange(int(l.sum()), dtype=np.int64) - np.repeat(np.cumsum(l) - l, l)
    return np.nonzero(mask)[0][idx], vals


class Engine:
    """Persistent lockstep simulation over one world.

    advance() runs exactly one tick: queued commands, then due spawns, then
    movement. Thread safety: enqueue_command() may be called from any
    thread; everything else belongs to the owning thread.
    """

    def __init__(self, world: WorldMap, params: SimParams):
        params.validate()
        self.world = world
        self.params = params
        self.tables = _world_tables(world)
        self.tick = 0
        self.corrupt = False
        self._cap = 16
        self._n = 0
        self._next_id = 0
        self._ids: Dict[int, int] = {}
        self._alloc_arrays(self._cap)
        self.occ = np.full(self.tables.n_points, -1, dtype=np.int64)
        self.head = [-1] * len(self.tables.route_ids)
        self.tail = [-1] * len(self.tables.route_ids)
        self._pending: List[Tuple[int, int]] = []
        self._cmd_lock = threading.Lock()
        self._cmd_queue: List[Command] = []
        self._pack_collisions: List[Tuple[int, int]] = []
        self._dirty: List = []
        self._dirty_n = 0
        self._dirty_all = False

    def _alloc_arrays(self, cap: int) -> None:
        self.vid = np.zeros(cap, dtype=np.int64)
        self.ridx = np.zeros(cap, dtype=np.int64)
        self.arc = np.zeros(cap, dtype=np.float64)
        self.speed = np.zeros(cap, dtype=np.float64)
        self.desired = np.zeros(cap, dtype=np.float64)
        self.flen = np.zeros(cap, dtype=np.float64)
        self.wait = np.zeros(cap, dtype=np.int64)
        self.active = np.zeros(cap, dtype=bool)
        self.spawned = np.zeros(cap, dtype=bool)
        self.ext_hold = np.zeros(cap, dtype=bool)
        self.vclass = np.zeros(cap, dtype=np.int8)
        self.leader = np.full(cap, -1, dtype=np.int64)
        self.follower = np.full(cap, -1, dtype=np.int64)

    def _grow(self) -> None:
        old = (
            self.vid, self.ridx, self.arc, self.speed, self.desired, self.flen,
            self.wait, self.active, self.spawned, self.ext_hold, self.vclass,
            self.leader, self.follower,
        )
        self._cap *= 2
        self._alloc_arrays(self._cap)
        for src, dst in zip(
            old,
            (
                self.vid, self.ridx, self.arc, self.speed, self.desired, self.flen,
                self.wait, self.active, self.spawned, self.ext_hold, self.vclass,
                self.leader, self.follower,
            ),
        ):
            dst[: self._n] = src[: self._n]

    def _alloc(self) -> int:
        if self._n == self._cap:
            self._grow()
        i = self._n
        self._n += 1
        return i

    # -- vehicle admission ------------------------------------------------

    def spawn(
        self,
        route_id: int,
        vclass: str,
        desired_speed: float,
        at_tick: Optional[int] = None,
    ) -> int:
        """Schedule a vehicle; returns its id immediately.

        The vehicle activates at the first tick >= at_tick whose entry cell
        is free (deferred deterministically otherwise). at_tick defaults to
        the next tick the engine will run.
        """
        if route_id not in self.tables.ridx_of:
            raise NoSuchRoute(f"no route {route_id} in world")
        if vclass not in _CLASS_CODE:
            raise ValidationError(f"unknown vehicle class {vclass!r}", field="class")
        if not (math.isfinite(desired_speed) and desired_speed >= 0.0):
            raise ValidationError("desired_speed must be finite and >= 0", field="desired_speed")
        i = self._alloc()
        vid = self._next_id
        self._next_id += 1
        self.vid[i] = vid
        self.ridx[i] = self.tables.ridx_of[route_id]
        self.arc[i] = 0.0
        self.speed[i] = 0.0
        self.desired[i] = desired_speed
        self.flen[i] = FOOTPRINT_LENGTH[vclass]
        self.wait[i] = 0
        self.active[i] = False
        self.spawned[i] = False
        self.ext_hold[i] = False
        self.vclass[i] = _CLASS_CODE[vclass]
        self.leader[i] = -1
        self.follower[i] = -1
        self._ids[vid] = i
        self._pending.append((self.tick if at_tick is None else at_tick, i))
        return vid

    def _try_activate(self, i: int, events: List[SimEvent]) -> bool:
        ridx = int(self.ridx[i])
        off = int(self.tables.offset[ridx])
        g = int(self.tables.pidx[off])
        if self.occ[g] != -1:
            return False
        self.active[i] = True
        self.spawned[i] = True
        self.arc[i] = 0.0
        self.speed[i] = min(float(self.desired[i]), float(self.tables.limits[off]))
        self._claim(off, i)
        old_tail = self.tail[ridx]
        self.leader[i] = old_tail
        self.follower[i] = -1
        if old_tail >= 0:
            self.follower[old_tail] = i
        else:
            self.head[ridx] = i
        self.tail[ridx] = i
        events.append(SimEvent(self.tick, EVENT_SPAWNED, (int(self.vid[i]),)))
        return True

    def _claim(self, flat: int, i: int) -> None:
        g = int(self.tables.pidx[flat])
        self.occ[g] = i
        self._dirty.append(g)
        self._dirty_n += 1

    def _release(self, flat: int, i: int) -> None:
        g = int(self.tables.pidx[flat])
        if self.occ[g] == i:
            self.occ[g] = -1
            self._dirty.append(g)
            self._dirty_n += 1

    def _flush_mirrors(self) -> None:
        """Apply deferred occupancy changes to PointRecord and Segment car_id.

        Mirrors are world-facing bookkeeping only; the engine reads just the
        occ array, so flushing can wait until someone looks at the world
        (write_back, audit_occupancy). Every segment through an occupied
        point mirrors the same occupant.
        """
        tb = self.tables
        if self._dirty_all:
            gs = range(tb.n_points)
        elif self._dirty:
            seen = set()
            for item in self._dirty:
                if isinstance(item, np.ndarray):
                    seen.update(item.tolist())
                else:
                    seen.add(item)
            gs = seen
        else:
            return
        for g in gs:
            o = int(self.occ[g])
            vid = None if o < 0 else int(self.vid[o])
            tb.point_recs[g].car_id = vid
            for f in tb.flats_of[g]:
                tb.segs[f].car_id = vid
        self._dirty = []
        self._dirty_n = 0
        self._dirty_all = False

    def _deactivate(self, i: int, events: List[SimEvent]) -> None:
        ridx = int(self.ridx[i])
        off = int(self.tables.offset[ridx])
        nc = int(self.tables.n_cells[ridx])
        lo, hi = footprint_cells(
            float(self.arc[i]), float(self.flen[i]), self.tables.rho, nc
        )
        for k in range(lo, hi + 1):
            self._release(off + k, i)
        lead = int(self.leader[i])
        foll = int(self.follower[i])
        if foll >= 0:
            self.leader[foll] = lead
        else:
            self.tail[ridx] = lead
        if lead >= 0:
            self.follower[lead] = foll
        else:
            self.head[ridx] = foll
        self.leader[i] = -1
        self.follower[i] = -1
        self.active[i] = False
        self.wait[i] = 0
        events.append(SimEvent(self.tick, EVENT_DEACTIVATED, (int(self.vid[i]),)))

    # -- commands ----------------------------------------------------------

    def enqueue_command(self, cmd: Command) -> None:
        """Queue a validated command for the next tick boundary."""
        cmd.validate()
        with self._cmd_lock:
            self._cmd_queue.append(cmd)

    def knows_vehicle(self, vehicle_id: int) -> bool:
        i = self._ids.get(vehicle_id)
        return i is not None and bool(self.spawned[i])

    def _apply_command(self, cmd: Command, events: List[SimEvent], log: List[dict]) -> None:
        i = self._ids.get(cmd.vehicle_id)
        applied = False
        if i is not None and self.active[i]:
            if cmd.kind == "set_desired_speed":
                self.desired[i] = cmd.value
                applied = True
            elif cmd.kind == "hold":
                self.ext_hold[i] = True
                applied = True
            elif cmd.kind == "release":
                self.ext_hold[i] = False
                applied = True
            elif cmd.kind == "despawn":
                self._deactivate(i, events)
                applied = True
        log.append(
            {
                "kind": cmd.kind,
                "vehicle_id": int(cmd.vehicle_id),
                "value": None if cmd.value is None else float(cmd.value),
                "client_tag": cmd.client_tag,
                "applied": applied,
            }
        )

    # -- the tick ----------------------------------------------------------

    def advance(self) -> TickResult:
        """Run one tick; returns its events and applied-command log."""
        if self.corrupt:
            raise CorruptState("engine is in a corrupt state")
        t = self.tick
        events: List[SimEvent] = []
        log: List[dict] = []
        with self._cmd_lock:
            cmds = self._cmd_queue
            self._cmd_queue = []
        for cmd in cmds:
            self._apply_command(cmd, events, log)
        if self._pending:
            still: List[Tuple[int, int]] = []
            for at, i in self._pending:
                if at <= t and self._try_activate(i, events):
                    continue
                still.append((at, i))
            self._pending = still
        self._move(t, events)
        if self._pack_collisions:
            for a, b in self._pack_collisions:
                events.append(SimEvent(t, EVENT_COLLISION, (a, b)))
            self._pack_collisions = []
        if not self._dirty_all and self._dirty_n > self.tables.n_points:
            # cheaper to resync every mirror than to replay a longer backlog
            self._dirty = []
            self._dirty_n = 0
            self._dirty_all = True
        self.tick = t + 1
        return TickResult(t, events, log)

    def _move(self, t: int, events: List[SimEvent]) -> None:
        n = self._n
        if n == 0:
            return
        tb = self.tables
        par = self.params
        act = self.active[:n]
        if not act.any():
            return
        arc_pre = self.arc[:n].copy()
        speed_pre = self.speed[:n].copy()
        ridx_v = self.ridx[:n]
        off_v = tb.offset[ridx_v]
        ncell_v = tb.n_cells[ridx_v]
        cells = np.minimum((arc_pre * tb.inv_rho).astype(np.int64), ncell_v - 1)
        flat = off_v + cells
        base = np.minimum(self.desired[:n], tb.limits[flat])
        if par.accel_limit is not None:
            np.minimum(base, speed_pre + par.accel_limit * par.tick_dt, out=base)
        lh = par.lookahead_horizon
        dt_frac = par.tick_dt / lh
        adv = (base * lh) * dt_frac
        new_arc = arc_pre + adv
        sweep_end = arc_pre + speed_pre * par.intersection_horizon + self.flen[:n]
        cand = act & (tb.next_conflict[flat] <= sweep_end)
        lead = self.leader[:n]
        gap_pre = arc_pre[lead] - self.flen[lead] - arc_pre
        lead_close = (lead >= 0) & (gap_pre <= base * lh)
        near_end = new_arc >= tb.arc_len[ridx_v]
        inside_sweep = adv <= sweep_end - arc_pre
        # a body still covering a shared cell must release it in priority
        # order, not in the early vectorized scatter
        rear_c = np.clip(
            np.floor((arc_pre - self.flen[:n]) * tb.inv_rho).astype(np.int64) + 1,
            0,
            ncell_v - 1,
        )
        on_conflict = tb.next_conflict[off_v + rear_c] <= arc_pre
        slow_mask = act & (
            cand | on_conflict | lead_close | near_end
            | self.ext_hold[:n] | ~inside_sweep
        )
        promoted = (
            (self.wait[:n] > par.aging_max_wait)
            if par.aging_enabled
            else np.zeros(n, dtype=bool)
        )

        claims: Dict[int, tuple] = {}
        cand_idx = np.nonzero(cand)[0]
        for i in cand_idx:
            ridx = int(ridx_v[i])
            off = int(off_v[i])
            nc = int(ncell_v[i])
            lo, hi = swept_cells(
                float(arc_pre[i]), float(speed_pre[i]), float(self.flen[i]),
                par.intersection_horizon, tb.rho, nc,
            )
            cc = tb.conflict_cells[ridx]
            a = bisect_left(cc, lo)
            b = bisect_right(cc, hi)
            if a == b:
                continue
            rid = tb.route_ids[ridx]
            lsmap = tb.conflict_ls[ridx]
            promo = 0 if promoted[i] else 1
            myid = int(self.vid[i])
            for k in cc[a:b]:
                g = int(tb.pidx[off + k])
                key = (promo, lsmap[k], myid)
                cur = claims.get(g)
                if cur is None:
                    claims[g] = (key, rid, None, None)
                else:
                    k1, r1, k2, r2 = cur
                    if key < k1:
                        if rid == r1:
                            claims[g] = (key, rid, k2, r2)
                        else:
                            claims[g] = (key, rid, k1, r1)
                    elif rid != r1 and (k2 is None or key < k2):
                        claims[g] = (k1, r1, key, rid)

        fast_idx = np.nonzero(act & ~slow_mask)[0]
        if fast_idx.size:
            rear_pre = np.maximum(
                np.floor((arc_pre[fast_idx] - self.flen[fast_idx]) * tb.inv_rho).astype(np.int64) + 1,
                0,
            )
            arc_f = new_arc[fast_idx]
            newcells = np.minimum((arc_f * tb.inv_rho).astype(np.int64), ncell_v[fast_idx] - 1)
            self.arc[fast_idx] = arc_f
            self.speed[fast_idx] = np.minimum(
                base[fast_idx], tb.limits[off_v[fast_idx] + newcells]
            )
            self.wait[fast_idx] = 0
            rear_post = np.maximum(
                np.floor((arc_f - self.flen[fast_idx]) * tb.inv_rho).astype(np.int64) + 1,
                0,
            )
            # claim entered cells before releasing vacated ones so cells swept
            # through within one tick (advance > footprint) end up free; fast
            # claims and releases are provably disjoint across vehicles
            offs_f = off_v[fast_idx]
            rows, ks = _ranges(cells[fast_idx] + 1, newcells - cells[fast_idx])
            if ks.size:
                gs = tb.pidx[offs_f[rows] + ks]
                self.occ[gs] = fast_idx[rows]
                self._dirty.append(gs)
                self._dirty_n += int(gs.size)
            rows, ks = _ranges(rear_pre, rear_post - rear_pre)
            if ks.size:
                gs = tb.pidx[offs_f[rows] + ks]
                own = self.occ[gs] == fast_idx[rows]
                gs = gs[own]
                self.occ[gs] = -1
                self._dirty.append(gs)
                self._dirty_n += int(gs.size)

        slow_idx = np.nonzero(slow_mask)[0]
        if slow_idx.size:
            rank_v = tb.rank[ridx_v]
            order = sorted(
                (int(i) for i in slow_idx),
                key=lambda i: (int(rank_v[i]), -float(arc_pre[i]), int(self.vid[i])),
            )
            for i in order:
                self._move_one(
                    i, t, float(base[i]), bool(cand[i]), bool(promoted[i]),
                    arc_pre, speed_pre, claims, events,
                )

    def _hold(self, i: int, t: int, events: List[SimEvent]) -> None:
        self.speed[i] = 0.0
        self.wait[i] += 1
        events.append(SimEvent(t, EVENT_HELD, (int(self.vid[i]),)))
        if self.wait[i] == self.params.aging_max_wait + 1:
            events.append(SimEvent(t, EVENT_STARVATION, (int(self.vid[i]),)))

    def _move_one(
        self,
        i: int,
        t: int,
        base: float,
        is_cand: bool,
        promo: bool,
        arc_pre: np.ndarray,
        speed_pre: np.ndarray,
        claims: Dict[int, tuple],
        events: List[SimEvent],
    ) -> None:
        if not self.active[i]:
            return
        if self.ext_hold[i]:
            self.speed[i] = 0.0
            return
        tb = self.tables
        par = self.params
        ridx = int(self.ridx[i])
        off = int(tb.offset[ridx])
        nc = int(tb.n_cells[ridx])
        arc = float(self.arc[i])
        front_pre = min(int(arc * tb.inv_rho), nc - 1)
        lo, hi = swept_cells(
            float(arc_pre[i]), float(speed_pre[i]), float(self.flen[i]),
            par.intersection_horizon, tb.rho, nc,
        )
        cc = tb.conflict_cells[ridx]

        if is_cand:
            lsmap = tb.conflict_ls[ridx]
            rid = tb.route_ids[ridx]
            myid = int(self.vid[i])
            pflag = 0 if promo else 1
            for k in cc[bisect_left(cc, lo):bisect_right(cc, hi)]:
                entry = claims.get(int(tb.pidx[off + k]))
                if entry is None:
                    continue
                k1, r1, k2, _r2 = entry
                rival = k1 if r1 != rid else k2
                if rival is not None and rival < (pflag, lsmap[k], myid):
                    self._hold(i, t, events)
                    return

        lead = int(self.leader[i])
        leader_arg = None
        if lead >= 0:
            gap = float(self.arc[lead]) - float(self.flen[lead]) - arc
            if gap < 0.0:
                gap = 0.0
            if gap <= base * par.lookahead_horizon:
                leader_arg = (gap, float(self.speed[lead]))
        dec = lane_follow(base, leader_arg, par.lookahead_horizon)
        na = arc + dec.advance * (par.tick_dt / par.lookahead_horizon)
        if lead >= 0:
            rear = float(self.arc[lead]) - float(self.flen[lead])
            if na > rear:
                # never move backward even from a packed-in overlap
                na = rear if rear > arc else arc
        front_post = min(int(na * tb.inv_rho), nc - 1)

        if front_post > hi and bisect_right(cc, hi) < bisect_right(cc, front_post):
            # a vehicle may not enter a conflict cell its sweep never covered;
            # only reachable when tick advance outruns the sweep (coarse tick_dt)
            self._hold(i, t, events)
            return

        for k in range(front_pre + 1, front_post + 1):
            o = self.occ[int(tb.pidx[off + k])]
            if o != -1 and o != i:
                self._hold(i, t, events)
                return

        rear_pre = max(int(math.floor((arc - float(self.flen[i])) * tb.inv_rho)) + 1, 0)
        self.arc[i] = na
        if na >= float(tb.arc_len[ridx]):
            # entered cells were never claimed, so drop the pre-move footprint
            for k in range(rear_pre, front_pre + 1):
                self._release(off + k, i)
            self.arc[i] = float(tb.arc_len[ridx])
            self.speed[i] = min(dec.new_speed, float(tb.limits[off + nc - 1]))
            self._deactivate(i, events)
            return
        for k in range(front_pre + 1, front_post + 1):
            self._claim(off + k, i)
        rear_post = max(int(math.floor((na - float(self.flen[i])) * tb.inv_rho)) + 1, 0)
        for k in range(rear_pre, rear_post):
            self._release(off + k, i)
        self.speed[i] = min(dec.new_speed, float(tb.limits[off + front_post]))
        self.wait[i] = 0

    # -- state export -------------------------------------------------------

    def pose(self, vehicle_id: int) -> Optional[dict]:
        i = self._ids.get(vehicle_id)
        if i is None or not self.spawned[i]:
            return None
        return self._pose(i)

    def _pose(self, i: int) -> dict:
        tb = self.tables
        ridx = int(self.ridx[i])
        off = int(tb.offset[ridx])
        nc = int(tb.n_cells[ridx])
        arc = float(self.arc[i])
        k = min(int(arc * tb.inv_rho), nc - 1)
        frac = arc * tb.inv_rho - k
        x0 = float(tb.px[off + k])
        y0 = float(tb.py[off + k])
        rot = float(tb.rot[off + k])
        if k + 1 < nc:
            x = x0 + (float(tb.px[off + k + 1]) - x0) * frac
            y = y0 + (float(tb.py[off + k + 1]) - y0) * frac
        else:
            x = x0 + math.cos(rot) * frac * tb.rho
            y = y0 + math.sin(rot) * frac * tb.rho
        return {
            "id": int(self.vid[i]),
            "active": bool(self.active[i]),
            "x": x,
            "y": y,
            "rotation": math.degrees(rot),
            "speed": float(self.speed[i]),
            "route": tb.route_ids[ridx],
            "tick": self.tick - 1,
        }

    def poses(self) -> List[dict]:
        """PosePackets for every vehicle spawned so far, in id order."""
        out = [self._pose(i) for i in range(self._n) if self.spawned[i]]
        out.sort(key=lambda p: p["id"])
        return out

    def vehicle_class(self, vehicle_id: int) -> Optional[str]:
        i = self._ids.get(vehicle_id)
        if i is None:
            return None
        return VEHICLE_CLASSES[int(self.vclass[i])]

    def active_count(self) -> int:
        return int(np.count_nonzero(self.active[: self._n]))

    def audit_occupancy(self) -> None:
        """Raise CorruptState unless occupancy matches vehicle footprints."""
        self._flush_mirrors()
        tb = self.tables
        want = np.full(tb.n_points, -1, dtype=np.int64)
        for i in range(self._n):
            if not self.active[i]:
                continue
            ridx = int(self.ridx[i])
            off = int(tb.offset[ridx])
            nc = int(tb.n_cells[ridx])
            lo, hi = footprint_cells(float(self.arc[i]), float(self.flen[i]), tb.rho, nc)
            for k in range(lo, hi + 1):
                g = int(tb.pidx[off + k])
                if want[g] != -1:
                    raise CorruptState(
                        f"vehicles {int(self.vid[want[g]])} and {int(self.vid[i])} share a cell"
                    )
                want[g] = i
        if not np.array_equal(want, self.occ):
            g = int(np.nonzero(want != self.occ)[0][0])
            raise CorruptState(f"occupancy mismatch at point index {g}")

    # -- interop with plain Vehicle lists ------------------------------------

    @classmethod
    def from_vehicles(
        cls,
        world: WorldMap,
        vehicles: Sequence[Vehicle],
        params: SimParams,
        tick: int = 0,
    ) -> "Engine":
        """Pack an explicit vehicle list into an engine.

        Occupancy is rebuilt from footprints; overlapping footprints are
        reported as collision events on the next tick. A world point whose
        car_id names a vehicle not actually covering it raises CorruptState.
        """
        eng = cls(world, params)
        eng.tick = tick
        tb = eng.tables
        ids = set()
        for v in vehicles:
            if v.id in ids:
                raise ValidationError(f"duplicate vehicle id {v.id}")
            ids.add(v.id)
            if v.route_id not in tb.ridx_of:
                raise NoSuchRoute(f"no route {v.route_id} in world")
            i = eng._alloc()
            eng.vid[i] = v.id
            eng.ridx[i] = tb.ridx_of[v.route_id]
            eng.arc[i] = v.arc_pos
            eng.speed[i] = v.speed
            eng.desired[i] = v.desired_speed
            eng.flen[i] = v.footprint_length
            eng.wait[i] = v.wait_ticks
            eng.active[i] = v.active
            eng.spawned[i] = True
            eng.vclass[i] = _CLASS_CODE.get(v.vclass, 0)
            eng._ids[v.id] = i
        eng._next_id = max(ids, default=-1) + 1

        collisions = set()
        for ridx in range(len(tb.route_ids)):
            members = [
                i for i in range(eng._n)
                if eng.active[i] and int(eng.ridx[i]) == ridx
            ]
            members.sort(key=lambda i: (-float(eng.arc[i]), int(eng.vid[i])))
            prev = -1
            for i in members:
                eng.leader[i] = prev
                if prev >= 0:
                    eng.follower[prev] = i
                prev = i
            if members:
                eng.head[ridx] = members[0]
                eng.tail[ridx] = members[-1]
        order = sorted(
            (i for i in range(eng._n) if eng.active[i]),
            key=lambda i: int(eng.vid[i]),
        )
        for i in order:
            ridx = int(eng.ridx[i])
            off = int(tb.offset[ridx])
            nc = int(tb.n_cells[ridx])
            lo, hi = footprint_cells(float(eng.arc[i]), float(eng.flen[i]), tb.rho, nc)
            for k in range(lo, hi + 1):
                g = int(tb.pidx[off + k])
                o = int(eng.occ[g])
                if o != -1:
                    pair = (int(eng.vid[o]), int(eng.vid[i]))
                    collisions.add((min(pair), max(pair)))
                else:
                    eng._claim(off + k, i)
        eng._pack_collisions = sorted(collisions)

        for rec in world.points.values():
            if rec.car_id is None:
                continue
            g = tb.point_index.get(rec.position)
            owner = -1 if g is None else int(eng.occ[g])
            if owner == -1 or int(eng.vid[owner]) != rec.car_id:
                raise CorruptState(
                    f"point {rec.position} claims vehicle {rec.car_id} which does not cover it"
                )
        return eng

    def write_back(self, vehicles: Sequence[Vehicle]) -> None:
        self._flush_mirrors()
        for v in vehicles:
            i = self._ids.get(v.id)
            if i is None:
                continue
            v.arc_pos = float(self.arc[i])
            v.speed = float(self.speed[i])
            v.desired_speed = float(self.desired[i])
            v.active = bool(self.active[i])
            v.wait_ticks = int(self.wait[i])


def step(
    world: WorldMap,
    vehicles: Sequence[Vehicle],
    params: SimParams,
    tick: int = 0,
) -> List[SimEvent]:
    """Advance an explicit vehicle list by one tick; mutates the vehicles.

    This is the one-shot form of Engine.advance() for callers that own plain
    Vehicle objects. Pending-spawn queues and command queues are Engine
    features; here every vehicle is already on the road.
    """
    eng = Engine.from_vehicles(world, vehicles, params, tick=tick)
    result = eng.advance()
    eng.write_back(vehicles)
    return result.events


def spawn(
    world: WorldMap,
    vehicles: List[Vehicle],
    route_id: int,
    vclass: str,
    desired_speed: float,
) -> Optional[Vehicle]:
    """Immediately add a vehicle at the route entry, if the entry cell is free.

    Returns the new Vehicle (appended to the list), or None when the entry
    cell is occupied; the Engine's spawn queue is the deterministic retry
    mechanism, callers of this one-shot form retry on their own schedule.
    """
    route = world.route(route_id)
    if vclass not in _CLASS_CODE:
        raise ValidationError(f"unknown vehicle class {vclass!r}", field="class")
    entry = route.segments[0].position
    for u in vehicles:
        if not u.active:
            continue
        r = world.route(u.route_id)
        lo, hi = footprint_cells(
            u.arc_pos, u.footprint_length, world.resolution, len(r.segments)
        )
        if any(r.segments[k].position == entry for k in range(lo, hi + 1)):
            return None
    vid = max((u.id for u in vehicles), default=-1) + 1
    v = Vehicle(
        id=vid,
        vclass=vclass,
        route_id=route_id,
        arc_pos=0.0,
        speed=min(desired_speed, route.segments[0].speed_limit),
        desired_speed=desired_speed,
        active=True,
        footprint_length=FOOTPRINT_LENGTH[vclass],
    )
    vehicles.append(v)
    return v
