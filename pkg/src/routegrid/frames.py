"""Frame rasterization and snapshot rendering.

Turns one trace frame into named binary occupancy channels (cars, buses,
police, roads, intersections, plus reserved always-empty bicycles and
pedestrians) or a deterministic SVG. The raster rule is center sampling: a
cell is set iff its center lies inside the footprint rectangle, with the
rectangle half-open on its leading edges so adjacent rectangles never
double-claim a boundary center.

Grids are row-major with row 0 at the world's south edge (minimum y);
exported graymaps are flipped so north reads as up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .canonical import dumps_canonical_bytes, fnum
from .errors import NoSuchVehicle, RenderError
from .model import FOOTPRINT_LENGTH, WorldMap
from .scenario import PadSpec

CHANNEL_NAMES = (
    "bicycles",
    "buses",
    "cars",
    "intersections",
    "pedestrians",
    "police",
    "roads",
)

_CLASS_CHANNEL = {"car": "cars", "bus": "buses", "police": "police"}

_BIRD_MARGIN = 12.0


@dataclass
class ChannelFrame:
    """Stack of same-shaped binary grids for one tick."""

    height: int
    width: int
    cell_size: float
    origin: Tuple[float, float]
    channels: Dict[str, np.ndarray]


def _world_bounds(world: WorldMap) -> Tuple[float, float, float, float]:
    if not world.points:
        return (0.0, 0.0, 0.0, 0.0)
    xs = []
    ys = []
    for coord in world.points:
        x, y = coord.to_world(world.resolution)
        xs.append(x)
        ys.append(y)
    return (min(xs), min(ys), max(xs), max(ys))


def _rects_static(world: WorldMap, pads: Sequence[PadSpec]):
    """(center, ux, uy, half_len, half_w) rows for roads and pads."""
    roads = []
    for rid in sorted(world.routes):
        route = world.routes[rid]
        for seg in route.segments:
            cx, cy = seg.position.to_world(world.resolution)
            roads.append(
                (
                    cx, cy,
                    math.cos(seg.rotation), math.sin(seg.rotation),
                    seg.scale[1] / 2.0, seg.scale[0] / 2.0,
                )
            )
    pad_rects = [
        (p.center[0], p.center[1], 1.0, 0.0, p.width / 2.0, p.length / 2.0)
        for p in pads
    ]
    return roads, pad_rects


def _vehicle_rect(pose: dict, world: WorldMap, classes: Mapping[int, str]):
    vclass = classes.get(pose["id"], "car")
    length = FOOTPRINT_LENGTH[vclass]
    route = world.route(pose["route"])
    width = route.segments[0].scale[0]
    theta = math.radians(pose["rotation"])
    ux = math.cos(theta)
    uy = math.sin(theta)
    cx = pose["x"] - (length / 2.0) * ux
    cy = pose["y"] - (length / 2.0) * uy
    return vclass, (cx, cy, ux, uy, length / 2.0, width / 2.0)


def _paint_bbox(grid: np.ndarray, origin, cell: float, rect) -> None:
    cx, cy, ux, uy, hl, hw = rect
    rad = math.hypot(hl, hw)
    i0 = max(int(math.floor((cx - rad - origin[0]) / cell)), 0)
    i1 = min(int(math.floor((cx + rad - origin[0]) / cell)), grid.shape[1] - 1)
    j0 = max(int(math.floor((cy - rad - origin[1]) / cell)), 0)
    j1 = min(int(math.floor((cy + rad - origin[1]) / cell)), grid.shape[0] - 1)
    if i0 > i1 or j0 > j1:
        return
    xs = origin[0] + (np.arange(i0, i1 + 1) + 0.5) * cell
    ys = origin[1] + (np.arange(j0, j1 + 1) + 0.5) * cell
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    u = dx * ux + dy * uy
    w = -dx * uy + dy * ux
    mask = (u >= -hl) & (u < hl) & (w >= -hw) & (w < hw)
    sub = grid[j0:j1 + 1, i0:i1 + 1]
    sub[mask] = 1


def _paint_grid(grid: np.ndarray, X: np.ndarray, Y: np.ndarray, rect) -> None:
    cx, cy, ux, uy, hl, hw = rect
    dx = X - cx
    dy = Y - cy
    u = dx * ux + dy * uy
    w = -dx * uy + dy * ux
    grid[(u >= -hl) & (u < hl) & (w >= -hw) & (w < hw)] = 1


def rasterize(
    world: WorldMap,
    frame: dict,
    classes: Mapping[int, str],
    view: str = "bird",
    cell_size: float = 1.0,
    pads: Sequence[PadSpec] = (),
    vehicle_id: Optional[int] = None,
    window: Tuple[float, float] = (40.0, 40.0),
) -> ChannelFrame:
    """Rasterize one trace frame into binary channels.

    view="bird" covers the world bounds plus a fixed margin, axes world
    aligned. view="vehicle" is a window (w, h) in meters centered on the
    subject vehicle's body center and rotated so its heading points up
    (grid row direction = heading). Only active vehicles paint; classes
    maps vehicle id to class name (ids default to "car").
    """
    poses = [p for p in frame["vehicles"] if p["active"]]
    roads, pad_rects = _rects_static(world, pads)

    if view == "bird":
        minx, miny, maxx, maxy = _world_bounds(world)
        origin = (minx - _BIRD_MARGIN, miny - _BIRD_MARGIN)
        width = max(int(math.ceil((maxx - minx + 2 * _BIRD_MARGIN) / cell_size)), 1)
        height = max(int(math.ceil((maxy - miny + 2 * _BIRD_MARGIN) / cell_size)), 1)
        grids = {
            name: np.zeros((height, width), dtype=np.uint8) for name in CHANNEL_NAMES
        }
        for rect in roads:
            _paint_bbox(grids["roads"], origin, cell_size, rect)
        for rect in pad_rects:
            _paint_bbox(grids["intersections"], origin, cell_size, rect)
        for pose in poses:
            vclass, rect = _vehicle_rect(pose, world, classes)
            _paint_bbox(grids[_CLASS_CHANNEL[vclass]], origin, cell_size, rect)
        return ChannelFrame(height, width, cell_size, origin, grids)

    if view != "vehicle":
        raise ValueError(f"unknown view {view!r}")
    subject = None
    for pose in frame["vehicles"]:
        if pose["id"] == vehicle_id:
            subject = pose
            break
    if subject is None:
        raise NoSuchVehicle(f"vehicle {vehicle_id} not in frame")
    svclass = classes.get(vehicle_id, "car")
    slen = FOOTPRINT_LENGTH[svclass]
    theta = math.radians(subject["rotation"])
    hx = math.cos(theta)
    hy = math.sin(theta)
    ccx = subject["x"] - (slen / 2.0) * hx
    ccy = subject["y"] - (slen / 2.0) * hy
    width = max(int(math.ceil(window[0] / cell_size)), 1)
    height = max(int(math.ceil(window[1] / cell_size)), 1)
    # right-hand axis when looking along the heading
    rx, ry = hy, -hx
    cols = (np.arange(width) + 0.5 - width / 2.0) * cell_size
    rows = (np.arange(height) + 0.5 - height / 2.0) * cell_size
    X = ccx + cols[None, :] * rx + rows[:, None] * hx
    Y = ccy + cols[None, :] * ry + rows[:, None] * hy
    grids = {name: np.zeros((height, width), dtype=np.uint8) for name in CHANNEL_NAMES}
    for rect in roads:
        _paint_grid(grids["roads"], X, Y, rect)
    for rect in pad_rects:
        _paint_grid(grids["intersections"], X, Y, rect)
    for pose in poses:
        vclass, rect = _vehicle_rect(pose, world, classes)
        _paint_grid(grids[_CLASS_CHANNEL[vclass]], X, Y, rect)
    return ChannelFrame(height, width, cell_size, (0.0, 0.0), grids)


def write_channels_binary(cf: ChannelFrame, path: str) -> None:
    """One file: a canonical JSON header line, then row-major 0/1 bytes for
    each channel in alphabetical order."""
    header = {
        "cell_size": cf.cell_size,
        "channels": list(CHANNEL_NAMES),
        "height": cf.height,
        "origin": [cf.origin[0], cf.origin[1]],
        "width": cf.width,
    }
    try:
        with open(path, "wb") as f:
            f.write(dumps_canonical_bytes(header) + b"\n")
            for name in CHANNEL_NAMES:
                f.write(cf.channels[name].astype(np.uint8).tobytes())
    except OSError as e:
        raise RenderError(f"cannot write {path}: {e}") from e


def read_channels_binary(path: str) -> ChannelFrame:
    import json

    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise RenderError(f"cannot read {path}: {e}") from e
    nl = data.index(b"\n")
    header = json.loads(data[:nl])
    h, w = header["height"], header["width"]
    body = data[nl + 1:]
    channels = {}
    for n, name in enumerate(header["channels"]):
        raw = body[n * h * w:(n + 1) * h * w]
        channels[name] = np.frombuffer(raw, dtype=np.uint8).reshape(h, w).copy()
    return ChannelFrame(
        h, w, header["cell_size"], tuple(header["origin"]), channels
    )


def write_channel_pgms(cf: ChannelFrame, directory: str) -> List[str]:
    """One P5 graymap per channel (0 or 255), north up. Returns paths."""
    import os

    paths = []
    for name in CHANNEL_NAMES:
        grid = np.flipud(cf.channels[name]) * np.uint8(255)
        path = os.path.join(directory, f"{name}.pgm")
        try:
            with open(path, "wb") as f:
                f.write(f"P5\n{cf.width} {cf.height}\n255\n".encode("ascii"))
                f.write(grid.tobytes())
        except OSError as e:
            raise RenderError(f"cannot write {path}: {e}") from e
        paths.append(path)
    return paths


_SVG_COLORS = {
    "car": ('#d62728', "none"),
    "bus": ('#1f77b4', "none"),
    "police": ('#ffffff', "#1f77b4"),
}


def _corners(rect) -> List[Tuple[float, float]]:
    cx, cy, ux, uy, hl, hw = rect
    nx, ny = -uy, ux
    return [
        (cx - hl * ux - hw * nx, cy - hl * uy - hw * ny),
        (cx + hl * ux - hw * nx, cy + hl * uy - hw * ny),
        (cx + hl * ux + hw * nx, cy + hl * uy + hw * ny),
        (cx - hl * ux + hw * nx, cy - hl * uy + hw * ny),
    ]


def _poly(points, fill: str, stroke: str = "none") -> str:
    coords = " ".join(f"{fnum(x)},{fnum(y)}" for x, y in points)
    stroke_attr = "" if stroke == "none" else f' stroke="{stroke}" stroke-width="0.3"'
    return f'<polygon points="{coords}" fill="{fill}"{stroke_attr}/>'


def render_svg(
    world: WorldMap,
    frame: dict,
    path: str,
    classes: Mapping[int, str] = {},
    pads: Sequence[PadSpec] = (),
) -> None:
    """Deterministic top-down SVG of one frame.

    Roads grey, intersection pads dark grey, cars red, buses blue, police
    white with a blue stroke; element order is pads, road segments in
    (route, seq) order, then vehicles by id. Same frame in, same bytes out.
    """
    minx, miny, maxx, maxy = _world_bounds(world)
    minx -= _BIRD_MARGIN
    miny -= _BIRD_MARGIN
    maxx += _BIRD_MARGIN
    maxy += _BIRD_MARGIN
    w = maxx - minx
    h = maxy - miny
    roads, pad_rects = _rects_static(world, pads)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'viewBox="{fnum(minx)} {fnum(-maxy)} {fnum(w)} {fnum(h)}">',
        # world y points up; flip into SVG's y-down space
        '<g transform="scale(1,-1)">',
        f'<rect x="{fnum(minx)}" y="{fnum(miny)}" width="{fnum(w)}" '
        f'height="{fnum(h)}" fill="#202020"/>',
    ]
    for rect in pad_rects:
        parts.append(_poly(_corners(rect), "#4d4d4d"))
    for rect in roads:
        parts.append(_poly(_corners(rect), "#808080"))
    for pose in sorted(frame["vehicles"], key=lambda p: p["id"]):
        if not pose["active"]:
            continue
        vclass, rect = _vehicle_rect(pose, world, classes)
        fill, stroke = _SVG_COLORS[vclass]
        parts.append(_poly(_corners(rect), fill, stroke))
    parts.append("</g>")
    parts.append("</svg>")
    try:
        with open(path, "w", encoding="ascii") as f:
            f.write("\n".join(parts) + "\n")
    except OSError as e:
        raise RenderError(f"cannot write {path}: {e}") from e
