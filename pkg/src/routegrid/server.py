"""HTTP streaming of simulation state plus a command channel.

One owner thread advances the engine and publishes an immutable snapshot
after every tick; request handlers only read the latest snapshot reference
and enqueue commands, so every GET observes exactly one tick and nothing
ever blocks the tick clock. In realtime mode ticks follow absolute
wall-clock deadlines at 1/tick_dt Hz (a tick that starts more than one
period late counts as missed); fast mode ticks back to back.

Endpoints: GET /line_segments, /car00../car99, /state, /healthz;
POST /carNN/command, /reset. JSON in, JSON out.
"""

from __future__ import annotations

import json
import re
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Dict, Optional

from .canonical import dumps_canonical_bytes
from .engine import Command, Engine, SimParams
from .errors import CorruptState, RecordError, ValidationError
from .scenario import Scenario, build_world, emit_line_segments
from .trace import TraceRecorder, frame_object

_CAR_GET = re.compile(r"^/car(\d{2})$")
_CAR_POST = re.compile(r"^/car(\d{2})/command$")

_MAX_BODY = 1 << 20


class _Snapshot:
    """Immutable publication of one completed tick."""

    __slots__ = ("tick", "car_bytes", "state_bytes")

    def __init__(self, tick: int, poses: list):
        self.tick = tick
        self.car_bytes: Dict[int, bytes] = {
            p["id"]: dumps_canonical_bytes(p) for p in poses
        }
        self.state_bytes = dumps_canonical_bytes(
            {"tick": tick, "vehicles": [p for p in poses if p["active"]]}
        )


class StreamServer:
    """Owns the engine, the tick clock, and the HTTP listener."""

    def __init__(
        self,
        scenario: Scenario,
        port: int = 5000,
        host: str = "127.0.0.1",
        realtime: bool = True,
        record_path: Optional[str] = None,
        max_ticks: Optional[int] = None,
    ):
        self.scenario = scenario
        self.realtime = realtime
        self.record_path = record_path
        self.max_ticks = max_ticks
        self.missed_ticks = 0
        self.corrupt = False
        self._engine_lock = threading.Lock()
        self._stop = threading.Event()
        self._recorder: Optional[TraceRecorder] = None
        self._build()
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.stream_server = self
        self.port = self._httpd.server_address[1]
        self._http_thread: Optional[threading.Thread] = None
        self._tick_thread: Optional[threading.Thread] = None

    def _build(self) -> None:
        world, spawns = build_world(self.scenario)
        self.world = world
        self.engine = Engine(world, self.scenario.params)
        for s in spawns:
            self.engine.spawn(s.route_id, s.vclass, s.desired_speed, at_tick=s.tick)
        self.line_segments = emit_line_segments(world, self.scenario.intersection_pads)
        self.snapshot = _Snapshot(-1, [])
        if self._recorder is not None:
            try:
                self._recorder.close()
            except RecordError:
                pass
            self._recorder = None
        if self.record_path:
            self._recorder = TraceRecorder(self.record_path)

    # -- tick clock ---------------------------------------------------------

    def _tick_once(self) -> None:
        with self._engine_lock:
            try:
                result = self.engine.advance()
            except CorruptState:
                self.corrupt = True
                self._stop.set()
                return
            obj = frame_object(self.engine, result)
            self.snapshot = _Snapshot(result.tick, obj["vehicles"])
            if self._recorder is not None:
                try:
                    self._recorder.write_frame(obj)
                except RecordError as e:
                    print(f"recording disabled: {e}", file=sys.stderr)
                    self._recorder = None

    def _run_clock(self) -> None:
        dt = self.scenario.params.tick_dt
        start = time.monotonic()
        n = 0
        while not self._stop.is_set():
            if self.max_ticks is not None and n >= self.max_ticks:
                break
            if self.realtime:
                deadline = start + (n + 1) * dt
                now = time.monotonic()
                if now < deadline:
                    if self._stop.wait(deadline - now):
                        break
                elif now - deadline > dt:
                    self.missed_ticks += 1
            self._tick_once()
            n += 1

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> None:
        self._http_thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True
        )
        self._http_thread.start()
        self._tick_thread = threading.Thread(target=self._run_clock, daemon=True)
        self._tick_thread.start()

    def run_forever(self) -> None:
        """start() then block until stopped (Ctrl-C in CLI use)."""
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.2)
                if (
                    self.max_ticks is not None
                    and self._tick_thread is not None
                    and not self._tick_thread.is_alive()
                ):
                    break
        except KeyboardInterrupt:
            pass
        finally:
            self.stop()

    def stop(self) -> None:
        self._stop.set()
        if self._tick_thread is not None:
            self._tick_thread.join(timeout=5.0)
        self._httpd.shutdown()
        if self._http_thread is not None:
            self._http_thread.join(timeout=5.0)
        self._httpd.server_close()
        if self._recorder is not None:
            try:
                self._recorder.close()
            except RecordError as e:
                print(f"trace footer not written: {e}", file=sys.stderr)
            self._recorder = None

    # -- request-side operations ----------------------------------------------

    def reset(self) -> None:
        """Rebuild the engine from the scenario; restarts any recording."""
        with self._engine_lock:
            self._build()
            self.corrupt = False

    def submit_command(self, vehicle_id: int, body: dict) -> None:
        allowed = ("kind", "value", "client_tag")
        for key in body:
            if key not in allowed:
                raise ValidationError(f"unknown field {key}", field=key)
        if "kind" not in body:
            raise ValidationError("missing field kind", field="kind")
        kind = body["kind"]
        if not isinstance(kind, str):
            raise ValidationError("kind must be a string", field="kind")
        value = body.get("value")
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ValidationError("value must be a number", field="value")
        client_tag = body.get("client_tag", "")
        if not isinstance(client_tag, str):
            raise ValidationError("client_tag must be a string", field="client_tag")
        cmd = Command(
            kind=kind,
            vehicle_id=vehicle_id,
            value=None if value is None else float(value),
            client_tag=client_tag,
        )
        self.engine.enqueue_command(cmd)

    def knows_vehicle(self, vehicle_id: int) -> bool:
        return vehicle_id in self.engine._ids


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    @property
    def server_obj(self) -> StreamServer:
        return self.server.stream_server

    def _send(self, code: int, payload: bytes) -> None:
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _send_obj(self, code: int, obj) -> None:
        self._send(code, dumps_canonical_bytes(obj))

    def do_GET(self):
        srv = self.server_obj
        if self.path == "/line_segments":
            self._send(200, srv.line_segments)
            return
        if self.path == "/state":
            self._send(200, srv.snapshot.state_bytes)
            return
        if self.path == "/healthz":
            if srv.corrupt:
                self._send_obj(503, {"error": "engine in corrupt state", "ok": False})
                return
            self._send_obj(
                200,
                {
                    "active": srv.engine.active_count(),
                    "missed_ticks": srv.missed_ticks,
                    "mode": "realtime" if srv.realtime else "fast",
                    "ok": True,
                    "tick": srv.engine.tick,
                },
            )
            return
        m = _CAR_GET.match(self.path)
        if m:
            packet = srv.snapshot.car_bytes.get(int(m.group(1)))
            if packet is None:
                self._send_obj(404, {"error": "no such vehicle"})
            else:
                self._send(200, packet)
            return
        self._send_obj(404, {"error": "no such endpoint"})

    def do_POST(self):
        srv = self.server_obj
        if self.path == "/reset":
            srv.reset()
            self._send_obj(200, {"ok": True})
            return
        m = _CAR_POST.match(self.path)
        if not m:
            self._send_obj(404, {"error": "no such endpoint"})
            return
        vehicle_id = int(m.group(1))
        length = int(self.headers.get("Content-Length", 0))
        if length <= 0 or length > _MAX_BODY:
            self._send_obj(400, {"error": "missing or oversized body", "field": None})
            return
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw)
        except json.JSONDecodeError as e:
            self._send_obj(400, {"error": f"body is not JSON: {e.msg}", "field": None})
            return
        if not isinstance(body, dict):
            self._send_obj(400, {"error": "body must be an object", "field": None})
            return
        if not srv.knows_vehicle(vehicle_id):
            self._send_obj(404, {"error": "no such vehicle"})
            return
        try:
            srv.submit_command(vehicle_id, body)
        except ValidationError as e:
            self._send_obj(400, {"error": str(e), "field": e.field})
            return
        self._send_obj(200, {"queued": True})


def serve(
    scenario: Scenario,
    port: int = 5000,
    realtime: bool = True,
    record_path: Optional[str] = None,
    host: str = "127.0.0.1",
    max_ticks: Optional[int] = None,
) -> StreamServer:
    """Create and start a StreamServer; caller stops it."""
    server = StreamServer(
        scenario,
        port=port,
        host=host,
        realtime=realtime,
        record_path=record_path,
        max_ticks=max_ticks,
    )
    server.start()
    return server
