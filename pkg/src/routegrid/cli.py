"""Command-line entry point.

Subcommands: validate (parse and build, print counts), run (headless ticks
or a live server), replay (re-simulate a trace and report divergence),
render (one trace frame to SVG or channel grids), report (CSV + figures).
Exit codes: 0 success, 1 usage/validation/divergence, 2 corrupt trace or
corrupt engine state.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import List, Optional

from .engine import Engine
from .errors import CorruptState, CorruptTrace, RecordError, RouteGridError
from .frames import rasterize, render_svg, write_channel_pgms, write_channels_binary
from .report import write_report
from .scenario import Scenario, build_world, load_scenario
from .server import StreamServer
from .trace import read_trace, record_run, replay, verify


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _classes_for(scenario: Scenario) -> dict:
    # engine ids are assigned in spawn-schedule order, starting at 0
    return {n: s.vclass for n, s in enumerate(scenario.spawns)}


def _engine_for(scenario: Scenario) -> Engine:
    world, spawns = build_world(scenario)
    engine = Engine(world, scenario.params)
    for s in spawns:
        engine.spawn(s.route_id, s.vclass, s.desired_speed, at_tick=s.tick)
    return engine


def cmd_validate(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        world, spawns = build_world(scenario)
    except (RouteGridError, OSError) as e:
        if args.json:
            payload = {"ok": False, "error": str(e), "type": type(e).__name__}
            field = getattr(e, "field", None)
            if field:
                payload["field"] = field
            print(json.dumps(payload, sort_keys=True))
        else:
            print(f"invalid: {e}", file=sys.stderr)
        return 1
    segments = sum(len(r.segments) for r in world.routes.values())
    shared = sum(1 for rec in world.points.values() if len(rec.route_ls) >= 2)
    if args.json:
        print(
            json.dumps(
                {
                    "ok": True,
                    "routes": len(world.routes),
                    "segments": segments,
                    "points": len(world.points),
                    "shared_points": shared,
                    "spawns": len(spawns),
                },
                sort_keys=True,
            )
        )
    else:
        print(
            f"ok: {len(world.routes)} routes, {segments} segments, "
            f"{len(world.points)} points, {shared} shared points, "
            f"{len(spawns)} spawns"
        )
    return 0


def cmd_run(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except (RouteGridError, OSError) as e:
        print(f"invalid scenario: {e}", file=sys.stderr)
        return 1
    if args.seed is not None:
        scenario = replace(scenario, params=replace(scenario.params, seed=args.seed))

    if args.serve:
        try:
            server = StreamServer(
                scenario,
                port=args.port,
                realtime=not args.fast,
                record_path=args.record,
            )
        except OSError as e:
            print(f"cannot bind port {args.port}: {e}", file=sys.stderr)
            return 1
        print(f"serving on port {server.port} "
              f"({'fast' if args.fast else 'realtime'} mode)")
        server.run_forever()
        return 0

    if args.ticks is None:
        print("headless run needs --ticks", file=sys.stderr)
        return 1
    engine = _engine_for(scenario)

    on_frame = None
    if args.render_every:
        if not args.render_dir:
            print("--render-every needs --render-dir", file=sys.stderr)
            return 1
        os.makedirs(args.render_dir, exist_ok=True)
        classes = _classes_for(scenario)
        world = engine.world
        pads = scenario.intersection_pads
        every = args.render_every
        render_dir = args.render_dir

        def on_frame(frame):
            if frame["tick"] % every == 0:
                out = os.path.join(render_dir, f"frame_{frame['tick']:06d}.svg")
                render_svg(world, frame, out, classes=classes, pads=pads)

    try:
        summary = record_run(engine, args.ticks, args.record, on_frame=on_frame)
    except CorruptState as e:
        print(f"corrupt state: {e}", file=sys.stderr)
        return 2
    except RecordError as e:
        print(f"recording failed: {e}", file=sys.stderr)
        return 1
    events = ", ".join(
        f"{kind}={n}" for kind, n in sorted(summary.event_counts.items())
    ) or "none"
    print(
        f"ran {summary.ticks} ticks, {summary.frames} frames, "
        f"sha256 {summary.sha256}\nevents: {events}"
    )
    return 0


def cmd_replay(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        report = verify(args.trace, scenario)
    except CorruptTrace as e:
        print(f"corrupt trace: {e}", file=sys.stderr)
        return 2
    except (RouteGridError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(str(report))
    return 0 if report.identical else 1


def cmd_render(args) -> int:
    try:
        scenario = load_scenario(args.scenario)
        world, _ = build_world(scenario)
        frames = list(replay(args.trace))
    except CorruptTrace as e:
        print(f"corrupt trace: {e}", file=sys.stderr)
        return 2
    except (RouteGridError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    if args.tick < 0 or args.tick >= len(frames):
        print(
            f"tick {args.tick} out of range (trace has {len(frames)} frames)",
            file=sys.stderr,
        )
        return 1
    frame = frames[args.tick]
    classes = _classes_for(scenario)
    if args.svg:
        try:
            render_svg(world, frame, args.svg, classes=classes,
                       pads=scenario.intersection_pads)
        except RouteGridError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        print(f"wrote {args.svg}")
        return 0
    view = "bird"
    vehicle_id = None
    if args.view != "bird":
        if not args.view.startswith("vehicle:"):
            print("--view must be 'bird' or 'vehicle:<id>'", file=sys.stderr)
            return 1
        try:
            vehicle_id = int(args.view.split(":", 1)[1])
        except ValueError:
            print("--view must be 'bird' or 'vehicle:<id>'", file=sys.stderr)
            return 1
        view = "vehicle"
    try:
        cf = rasterize(
            world,
            frame,
            classes,
            view=view,
            cell_size=args.cell,
            pads=scenario.intersection_pads,
            vehicle_id=vehicle_id,
            window=(args.window[0], args.window[1]),
        )
        os.makedirs(args.channels, exist_ok=True)
        write_channels_binary(cf, os.path.join(args.channels, "channels.bin"))
        paths = write_channel_pgms(cf, args.channels)
    except RouteGridError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {os.path.join(args.channels, 'channels.bin')} and "
          f"{len(paths)} graymaps")
    return 0


def cmd_report(args) -> int:
    try:
        read_trace(args.trace)
        paths = write_report(args.trace, args.out)
    except CorruptTrace as e:
        print(f"corrupt trace: {e}", file=sys.stderr)
        return 2
    except (RouteGridError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="routegrid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a scenario and report counts")
    p.add_argument("scenario")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run headless ticks or serve over HTTP")
    p.add_argument("scenario")
    p.add_argument("--ticks", type=int, help="tick count (headless mode)")
    p.add_argument("--serve", action="store_true", help="serve over HTTP instead")
    p.add_argument("--port", type=int, default=5000)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--realtime", action="store_true", default=True,
                      help="wall-clock tick rate (serve default)")
    mode.add_argument("--fast", action="store_true", help="unthrottled ticks")
    p.add_argument("--record", metavar="PATH", help="record a trace file")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--render-every", type=int, metavar="N",
                   help="write an SVG snapshot every N ticks")
    p.add_argument("--render-dir", metavar="DIR",
                   help="directory for --render-every snapshots")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="re-simulate a trace and check it")
    p.add_argument("trace")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("render", help="render one trace frame")
    p.add_argument("trace")
    p.add_argument("scenario")
    p.add_argument("--tick", type=int, required=True)
    out = p.add_mutually_exclusive_group(required=True)
    out.add_argument("--svg", metavar="PATH", help="write an SVG snapshot")
    out.add_argument("--channels", metavar="DIR", help="write channel grids")
    p.add_argument("--view", default="bird", help="bird or vehicle:<id>")
    p.add_argument("--cell", type=float, default=1.0, help="cell size in meters")
    p.add_argument("--window", type=float, nargs=2, default=(40.0, 40.0),
                   metavar=("W", "H"), help="vehicle-view window in meters")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", help="write CSV and figures from a trace")
    p.add_argument("trace")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
