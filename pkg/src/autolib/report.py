"""Figure rendering for simulation runs.

Renders a small report alongside the metrics CSV: task latency histogram,
per-arm activity timeline, utilization bars, shelf occupancy, and a
schematic of the rail layout. All figures go to PNG files in a chosen
directory; nothing here touches a display.
"""

from __future__ import annotations

from collections import deque
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .events import Event
from .railnet import RailGraph
from .shelving import ShelfMap
from .sim import Metrics

PHASE_COLORS = {
    "travel": "#1f77b4",
    "rotate": "#9467bd",
    "hoist": "#2ca02c",
    "align": "#17becf",
    "extend": "#ff7f0e",
    "grip": "#d62728",
    "release": "#8c564b",
    "retract": "#e377c2",
}


def schematic_positions(graph: RailGraph) -> dict[str, tuple[float, float]]:
    """Deterministic 2-D embedding: hop-count layers from the first station
    become columns; nodes sort by id within a layer."""
    start = min(
        (n.id for n in graph.nodes.values() if n.kind == "station"),
        default=min(graph.nodes),
    )
    depth = {start: 0}
    frontier = deque([start])
    while frontier:
        node = frontier.popleft()
        for edge in graph.incident_edges(node):
            other, _ = edge.other(node)
            if other not in depth:
                depth[other] = depth[node] + 1
                frontier.append(other)
    layers: dict[int, list[str]] = {}
    for node, d in depth.items():
        layers.setdefault(d, []).append(node)
    positions = {}
    for d, nodes in layers.items():
        for i, node in enumerate(sorted(nodes)):
            positions[node] = (float(d), i - (len(nodes) - 1) / 2.0)
    return positions


def _save(fig, out_dir: Path, name: str) -> Path:
    path = out_dir / name
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def fig_latency_hist(trace: list[Event], out_dir: Path) -> Path:
    submitted, latencies = {}, []
    for e in trace:
        if e.kind == "TaskSubmitted":
            submitted[e.payload["task_id"]] = e.time_ms
        elif e.kind == "TaskCompleted" and e.payload["task_id"] in submitted:
            latencies.append((e.time_ms - submitted[e.payload["task_id"]]) / 1000.0)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if latencies:
        ax.hist(latencies, bins=min(20, max(5, len(latencies))), color="#1f77b4", edgecolor="black")
    ax.set_xlabel("task latency (s)")
    ax.set_ylabel("tasks")
    ax.set_title("Completed-task latency")
    return _save(fig, out_dir, "latency_hist.png")


def fig_arm_timeline(trace: list[Event], out_dir: Path) -> Path:
    spans: dict[int, list[tuple[int, int, str]]] = {}
    for e in trace:
        p = e.payload
        if e.kind in ("PhaseComplete", "GripOk", "GripFail") and "duration_ms" in p:
            spans.setdefault(p["arm_id"], []).append(
                (p["started_ms"], p["duration_ms"], p.get("phase", "grip"))
            )
    fig, ax = plt.subplots(figsize=(9, 1.0 + 0.8 * max(1, len(spans))))
    arms = sorted(spans)
    for row, arm in enumerate(arms):
        for start, duration, phase in spans[arm]:
            if duration <= 0:
                continue
            ax.broken_barh(
                [(start / 1000.0, duration / 1000.0)],
                (row + 0.6, 0.8),
                facecolors=PHASE_COLORS.get(phase, "#7f7f7f"),
            )
    ax.set_yticks([r + 1 for r in range(len(arms))])
    ax.set_yticklabels([f"arm {a}" for a in arms])
    ax.set_xlabel("simulation time (s)")
    ax.set_title("Arm activity")
    handles = [plt.Rectangle((0, 0), 1, 1, fc=c) for c in PHASE_COLORS.values()]
    ax.legend(handles, PHASE_COLORS.keys(), ncol=4, fontsize=7, loc="upper right")
    return _save(fig, out_dir, "arm_timeline.png")


def fig_utilization(metrics: Metrics, out_dir: Path) -> Path:
    fig, ax = plt.subplots(figsize=(4, 3))
    arms = sorted(metrics.utilization)
    ax.bar([f"arm {a}" for a in arms], [metrics.utilization[a] for a in arms], color="#2ca02c")
    ax.set_ylim(0, 1)
    ax.set_ylabel("busy fraction")
    ax.set_title("Arm utilization")
    return _save(fig, out_dir, "utilization.png")


def fig_occupancy(shelves: ShelfMap, out_dir: Path) -> Path:
    report = shelves.occupancy_report()
    labels = [f"r{row.rack} L{row.level}" for row in report]
    ratios = [row.fill_ratio for row in report]
    fig, ax = plt.subplots(figsize=(max(4, 0.6 * len(labels)), 3))
    ax.bar(labels, ratios, color="#ff7f0e")
    ax.set_ylim(0, 1)
    ax.set_ylabel("fill ratio")
    ax.set_title("Shelf occupancy by level")
    plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
    return _save(fig, out_dir, "occupancy.png")


def fig_layout(graph: RailGraph, out_dir: Path) -> Path:
    positions = schematic_positions(graph)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for edge in sorted(graph.edges.values(), key=lambda e: e.id):
        (x1, y1), (x2, y2) = positions[edge.a[0]], positions[edge.b[0]]
        ax.plot([x1, x2], [y1, y2], color="#999999", lw=2, zorder=1)
        ax.annotate(
            f"{edge.id} ({edge.length_m} m)",
            ((x1 + x2) / 2, (y1 + y2) / 2),
            fontsize=7,
            ha="center",
            color="#555555",
        )
    markers = {"turntable": ("s", "#9467bd"), "station": ("o", "#1f77b4"), "rack_port": ("^", "#2ca02c")}
    for node in sorted(graph.nodes.values(), key=lambda n: n.id):
        x, y = positions[node.id]
        marker, color = markers[node.kind]
        ax.scatter([x], [y], marker=marker, s=220, c=color, zorder=2, edgecolors="black")
        ax.annotate(node.id, (x, y - 0.28), ha="center", fontsize=8)
    ax.set_axis_off()
    ax.set_title("Rail layout (schematic)")
    return _save(fig, out_dir, "layout.png")


def render_report(
    trace: list[Event],
    metrics: Metrics,
    shelves: ShelfMap,
    graph: RailGraph,
    out_dir: str | Path,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        fig_latency_hist(trace, out),
        fig_arm_timeline(trace, out),
        fig_utilization(metrics, out),
        fig_occupancy(shelves, out),
        fig_layout(graph, out),
    ]
