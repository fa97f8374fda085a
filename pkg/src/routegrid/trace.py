"""Trace recording, replay, and re-simulation checks.

A trace is line-delimited JSON: one canonical frame object per tick, then a
footer line carrying the frame count and a sha256 over all frame lines.
Because frames are canonical bytes, equality of traces is equality of runs;
verify() re-simulates a scenario feeding back the recorded command log and
reports the first tick whose frame bytes differ.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

from .canonical import dumps_canonical_bytes
from .engine import Command, Engine, SimParams, TickResult
from .errors import CorruptTrace, RecordError
from .scenario import Scenario, SpawnSpec, build_world


def frame_object(engine: Engine, result: TickResult) -> dict:
    """The canonical-ready dict for one completed tick."""
    return {
        "tick": result.tick,
        "vehicles": engine.poses(),
        "events": [
            {"tick": e.tick, "kind": e.kind, "vehicle_ids": [int(i) for i in e.vehicle_ids]}
            for e in result.events
        ],
        "commands_applied": result.commands_applied,
    }


class TraceRecorder:
    """Writes frames as they happen; close() appends the footer."""

    def __init__(self, path: str):
        self.path = path
        self.count = 0
        self.hash = hashlib.sha256()
        try:
            self._f = open(path, "wb")
        except OSError as e:
            raise RecordError(f"cannot open trace {path}: {e}") from e

    def write_frame(self, frame_obj: dict) -> None:
        line = dumps_canonical_bytes(frame_obj) + b"\n"
        self.hash.update(line)
        self.count += 1
        try:
            self._f.write(line)
        except OSError as e:
            raise RecordError(f"cannot write trace {self.path}: {e}") from e

    def close(self) -> str:
        footer = {"frames": self.count, "sha256": self.hash.hexdigest()}
        try:
            self._f.write(dumps_canonical_bytes(footer) + b"\n")
            self._f.close()
        except OSError as e:
            raise RecordError(f"cannot finish trace {self.path}: {e}") from e
        return footer["sha256"]


@dataclass
class RunSummary:
    ticks: int
    frames: int
    sha256: str
    event_counts: dict


def record_run(
    engine: Engine,
    ticks: int,
    path: Optional[str] = None,
    on_frame=None,
) -> RunSummary:
    """Advance the engine `ticks` times, optionally recording to `path`.

    The frame checksum is computed whether or not a file is written, so two
    runs can be compared without touching disk. A recording failure keeps
    the run going unrecorded, per the recorder contract.
    """
    recorder = TraceRecorder(path) if path else None
    digest = hashlib.sha256()
    counts: dict = {}
    frames = 0
    record_error: Optional[RecordError] = None
    try:
        for _ in range(ticks):
            result = engine.advance()
            obj = frame_object(engine, result)
            line = dumps_canonical_bytes(obj) + b"\n"
            digest.update(line)
            frames += 1
            for e in result.events:
                counts[e.kind] = counts.get(e.kind, 0) + 1
            if recorder is not None:
                try:
                    recorder.write_frame(obj)
                except RecordError as err:
                    record_error = err
                    recorder = None
            if on_frame is not None:
                on_frame(obj)
    finally:
        if recorder is not None:
            recorder.close()
    if record_error is not None:
        raise record_error
    return RunSummary(ticks, frames, digest.hexdigest(), counts)


def _read_lines(path: str) -> List[bytes]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CorruptTrace(f"cannot read trace {path}: {e}") from e
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if not lines:
        raise CorruptTrace("trace is empty, footer missing")
    return lines


def read_trace(path: str) -> Tuple[List[bytes], dict]:
    """All frame lines plus the parsed footer, checksum verified."""
    lines = _read_lines(path)
    try:
        footer = json.loads(lines[-1])
    except json.JSONDecodeError as e:
        raise CorruptTrace(f"footer is not JSON: {e}") from e
    if not isinstance(footer, dict) or "frames" not in footer or "sha256" not in footer:
        raise CorruptTrace("footer missing frames/sha256")
    frame_lines = lines[:-1]
    if len(frame_lines) != footer["frames"]:
        raise CorruptTrace(
            f"footer says {footer['frames']} frames, file has {len(frame_lines)}"
        )
    digest = hashlib.sha256()
    for line in frame_lines:
        digest.update(line + b"\n")
    if digest.hexdigest() != footer["sha256"]:
        raise CorruptTrace("trace checksum mismatch")
    return frame_lines, footer


def replay(path: str) -> Iterator[dict]:
    """Iterate parsed frames of a checksum-verified trace."""
    frame_lines, _ = read_trace(path)
    for n, line in enumerate(frame_lines):
        try:
            frame = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorruptTrace(f"frame {n} is not JSON: {e}") from e
        yield frame


@dataclass
class VerifyReport:
    identical: bool
    frames: int
    divergent_tick: Optional[int] = None
    detail: str = ""

    def __str__(self) -> str:
        if self.identical:
            return f"identical ({self.frames} frames)"
        return f"divergence at tick {self.divergent_tick}: {self.detail}"


def _engine_for(scenario: Scenario) -> Engine:
    world, spawns = build_world(scenario)
    engine = Engine(world, scenario.params)
    for s in spawns:
        engine.spawn(s.route_id, s.vclass, s.desired_speed, at_tick=s.tick)
    return engine


def verify(trace_path: str, scenario: Scenario) -> VerifyReport:
    """Re-simulate the scenario, replaying the recorded command log.

    Commands logged in a frame are fed to the fresh engine before that tick
    runs (rejected ones too: rejection is deterministic). The first frame
    whose canonical bytes differ from the recording is the divergence.
    """
    frame_lines, footer = read_trace(trace_path)
    engine = _engine_for(scenario)
    for n, line in enumerate(frame_lines):
        try:
            recorded = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorruptTrace(f"frame {n} is not JSON: {e}") from e
        tick = recorded.get("tick")
        if tick != n:
            return VerifyReport(
                False, footer["frames"], divergent_tick=n,
                detail=f"frame {n} carries tick {tick}",
            )
        for cmd in recorded.get("commands_applied", []):
            engine.enqueue_command(
                Command(
                    kind=cmd["kind"],
                    vehicle_id=cmd["vehicle_id"],
                    value=cmd.get("value"),
                    client_tag=cmd.get("client_tag", ""),
                )
            )
        result = engine.advance()
        live = dumps_canonical_bytes(frame_object(engine, result))
        if live != line:
            return VerifyReport(
                False, footer["frames"], divergent_tick=n,
                detail="frame bytes differ from re-simulation",
            )
    return VerifyReport(True, footer["frames"])
