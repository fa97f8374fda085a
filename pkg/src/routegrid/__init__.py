"""Deterministic grid-quantized traffic microsimulation.

Routes are polylines resampled onto a square grid; vehicles follow their
route with a catch-up car-following rule and cross shared grid points under
per-point priority. The engine ticks in lockstep and is bit-reproducible;
state streams over HTTP, records to checksummed traces, and rasterizes to
per-class occupancy channels.
"""

from .canonical import dumps_canonical, dumps_canonical_bytes, fnum
from .engine import (
    Command,
    Engine,
    SimEvent,
    SimParams,
    TickResult,
    intersection_clear,
    spawn,
    step,
)
from .errors import (
    AmbiguousPoint,
    CorruptState,
    CorruptTrace,
    DuplicateRoute,
    IllegalOverlap,
    InvalidCoordinate,
    InvalidKinematics,
    NoSuchPoint,
    NoSuchRoute,
    NoSuchVehicle,
    NotOnRoute,
    ParseError,
    RecordError,
    RenderError,
    RouteGridError,
    SchemaError,
    ValidationError,
)
from .follow import (
    LaneFollowDecision,
    find_leader,
    footprint_cells,
    lane_follow,
    swept_cells,
    swept_points,
)
from .frames import (
    ChannelFrame,
    rasterize,
    read_channels_binary,
    render_svg,
    write_channel_pgms,
    write_channels_binary,
)
from .model import (
    FOOTPRINT_LENGTH,
    VEHICLE_CLASSES,
    GridCoord,
    PointRecord,
    Route,
    Segment,
    Vehicle,
    WorldMap,
    quantize,
    register_route,
    route_heading_at_arc,
    route_position_at_arc,
    segment_by_point,
    segment_by_route,
)
from .report import write_report
from .scenario import (
    PadSpec,
    RouteSpec,
    Scenario,
    SpawnSpec,
    build_world,
    emit_line_segments,
    emit_scenario,
    load_scenario,
    parse_scenario,
)
from .server import StreamServer, serve
from .trace import (
    RunSummary,
    TraceRecorder,
    VerifyReport,
    frame_object,
    read_trace,
    record_run,
    replay,
    verify,
)

__version__ = "0.1.0"
