"""Run reports: delimited per-tick data plus rendered figures.

Reads a recorded trace and writes a CSV timeline next to a small set of PNG
charts (active vehicles, mean speed, cumulative events). The CSV is the
machine-readable artifact; the figures are the same series for humans.
"""

from __future__ import annotations

import csv
import os
from typing import Dict, List

from .canonical import fnum
from .trace import replay

_EVENT_COLS = (
    "spawned",
    "deactivated",
    "held_at_intersection",
    "collision",
    "starvation_warning",
)


def _timeline(trace_path: str) -> List[dict]:
    rows = []
    for frame in replay(trace_path):
        active = [v for v in frame["vehicles"] if v["active"]]
        counts = {kind: 0 for kind in _EVENT_COLS}
        for event in frame["events"]:
            if event["kind"] in counts:
                counts[event["kind"]] += 1
        rows.append(
            {
                "tick": frame["tick"],
                "active": len(active),
                "mean_speed": (
                    sum(v["speed"] for v in active) / len(active) if active else 0.0
                ),
                "commands_applied": sum(
                    1 for c in frame["commands_applied"] if c["applied"]
                ),
                **counts,
            }
        )
    return rows


def write_report(trace_path: str, out_dir: str) -> List[str]:
    """Write report.csv and the figure PNGs; returns the paths written."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    rows = _timeline(trace_path)
    paths = []

    csv_path = os.path.join(out_dir, "report.csv")
    fields = ["tick", "active", "mean_speed", *_EVENT_COLS, "commands_applied"]
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(fields)
        for row in rows:
            writer.writerow(
                [
                    row["tick"],
                    row["active"],
                    fnum(row["mean_speed"]),
                    *[row[kind] for kind in _EVENT_COLS],
                    row["commands_applied"],
                ]
            )
    paths.append(csv_path)

    ticks = [r["tick"] for r in rows]

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(ticks, [r["active"] for r in rows], color="#1f77b4")
    ax.set_xlabel("tick")
    ax.set_ylabel("active vehicles")
    ax.set_title("Active vehicles per tick")
    fig.tight_layout()
    p = os.path.join(out_dir, "active_vehicles.png")
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(ticks, [r["mean_speed"] for r in rows], color="#2ca02c")
    ax.set_xlabel("tick")
    ax.set_ylabel("mean speed (m/s)")
    ax.set_title("Mean speed of active vehicles")
    fig.tight_layout()
    p = os.path.join(out_dir, "mean_speed.png")
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(8, 4))
    for kind, color in zip(_EVENT_COLS, ("#1f77b4", "#2ca02c", "#ff7f0e", "#d62728", "#9467bd")):
        total = 0
        series = []
        for row in rows:
            total += row[kind]
            series.append(total)
        ax.plot(ticks, series, label=kind, color=color)
    ax.set_xlabel("tick")
    ax.set_ylabel("cumulative events")
    ax.set_title("Events over the run")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    p = os.path.join(out_dir, "events.png")
    fig.savefig(p, dpi=100)
    plt.close(fig)
    paths.append(p)

    return paths
