"""Deterministic discrete-event simulation runs.

A scenario (layout + initial catalog + timed requests + seed) is executed
against the controller on an integer-millisecond clock. Identical inputs
give byte-identical traces: all noise comes from one seeded generator and
simultaneous events are ordered by insertion sequence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import arm as armmod
from .catalog import Catalog, TransactionLog
from .errors import ScenarioInvalid, SimTimeBudgetExceeded
from .events import Event, EventQueue, dump_trace
from .layout import Layout, load_layout
from .orchestrator import LibraryController, NoiseParams
from .railnet import shortest_route
from .shelving import ShelfMap


@dataclass(frozen=True)
class Request:
    at_ms: int
    op: str  # "return" | "retrieve"
    record: Optional[dict] = None
    barcode: Optional[str] = None
    kiosk_id: Optional[str] = None

    @classmethod
    def from_json(cls, doc: dict) -> "Request":
        op = doc.get("op")
        if op not in ("return", "retrieve"):
            raise ScenarioInvalid(f"unknown request op {op!r}")
        at_ms = int(doc.get("at_ms", 0))
        if at_ms < 0:
            raise ScenarioInvalid("request times must be nonnegative")
        return cls(
            at_ms=at_ms,
            op=op,
            record=doc.get("record"),
            barcode=doc.get("barcode"),
            kiosk_id=doc.get("kiosk_id"),
        )


@dataclass
class Scenario:
    layout: Layout
    catalog: Catalog
    requests: list[Request]
    seed: int = 0
    budget_ms: Optional[int] = None
    noise: NoiseParams = field(default_factory=NoiseParams)

    def __post_init__(self):
        times = [r.at_ms for r in self.requests]
        if times != sorted(times):
            raise ScenarioInvalid("request times must be nondecreasing")


def load_scenario(path: str | Path, seed_override: Optional[int] = None) -> Scenario:
    base = Path(path).parent
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    layout = load_layout(_resolve(base, doc["layout"]))
    if doc.get("catalog"):
        catalog = Catalog.load(_resolve(base, doc["catalog"]), layout.sort_policy)
    else:
        catalog = Catalog(layout.sort_policy)
    requests = [Request.from_json(r) for r in doc.get("requests", [])]
    seed = int(doc.get("seed", 0)) if seed_override is None else seed_override
    budget = doc.get("budget_ms")
    return Scenario(
        layout=layout,
        catalog=catalog,
        requests=requests,
        seed=seed,
        budget_ms=int(budget) if budget is not None else None,
        noise=NoiseParams.from_dict(doc.get("noise", {})),
    )


def _resolve(base: Path, ref: str) -> Path:
    p = Path(ref)
    return p if p.is_absolute() else base / p


def default_budget_ms(scenario: Scenario) -> int:
    """Ten times a naive sequential estimate of the whole workload, padded
    by the last submission time. Generous by construction: it exists to
    turn liveness bugs into loud failures, not to squeeze schedules."""
    layout = scenario.layout
    graph = layout.graph
    params = layout.params
    parking = graph.parking_nodes()
    worst_route = 0.0
    for i, a in enumerate(parking):
        for b in parking[i + 1:]:
            worst_route = max(worst_route, shortest_route(graph, a, b, params).total_time_s)
    racks = layout.new_shelf_map().racks
    max_level = max(len(levels) - 1 for levels in racks)
    max_slot = max(spec.slot_count - 1 for levels in racks for spec in levels)
    widest = max(spec.pitch_mm for levels in racks for spec in levels)
    hoist_s = max_level * params.level_height_m / params.hoist_speed_mps
    align_s = max_slot * (widest / 1000.0) / params.hoist_speed_mps
    handling_s = 2 * (2 * params.extend_time_s + layout.grip_params.timeout_ms / 1000.0)
    per_task_ms = armmod.ms_half_up(3 * worst_route + 2 * (hoist_s + align_s) + handling_s)
    last_at = scenario.requests[-1].at_ms if scenario.requests else 0
    return last_at + 10 * per_task_ms * max(1, len(scenario.requests)) + 60_000


@dataclass
class Metrics:
    tasks_submitted: int = 0
    tasks_completed: int = 0
    tasks_failed: int = 0
    mean_latency_ms: float = 0.0
    p95_latency_ms: int = 0
    utilization: dict[int, float] = field(default_factory=dict)
    distance_m: float = 0.0
    deadlocks_resolved: int = 0

    def csv_header(self) -> str:
        arm_cols = ",".join(f"utilization_arm_{arm}" for arm in sorted(self.utilization))
        cols = "tasks_completed,tasks_failed,mean_latency_ms,p95_latency_ms"
        if arm_cols:
            cols += "," + arm_cols
        return cols + ",distance_m,deadlocks_resolved"

    def csv_row(self) -> str:
        cells = [
            str(self.tasks_completed),
            str(self.tasks_failed),
            f"{self.mean_latency_ms:.3f}",
            str(self.p95_latency_ms),
        ]
        cells += [f"{self.utilization[arm]:.6f}" for arm in sorted(self.utilization)]
        cells += [f"{self.distance_m:.3f}", str(self.deadlocks_resolved)]
        return ",".join(cells)

    def to_csv(self) -> str:
        return self.csv_header() + "\n" + self.csv_row() + "\n"


def nearest_rank_percentile(values: list[int], percentile: float) -> int:
    """Nearest-rank method: the ceil(p*n)-th smallest value."""
    if not values:
        return 0
    ordered = sorted(values)
    rank = max(1, math.ceil(percentile * len(ordered)))
    return ordered[rank - 1]


def compute_metrics(trace: list[Event], arm_ids: Optional[list[int]] = None) -> Metrics:
    """Pure function of the trace (plus the arm roster, so idle arms still
    report zero utilization)."""
    submitted: dict[int, int] = {}
    completed: dict[int, int] = {}
    failed = 0
    busy_ms: dict[int, int] = {arm: 0 for arm in (arm_ids or [])}
    distance = 0.0
    deadlocks = 0
    end_ms = 0
    for event in trace:
        end_ms = max(end_ms, event.time_ms)
        p = event.payload
        if event.kind == "TaskSubmitted":
            submitted[p["task_id"]] = event.time_ms
        elif event.kind == "TaskCompleted":
            completed[p["task_id"]] = event.time_ms
        elif event.kind == "TaskFailed":
            failed += 1
        elif event.kind == "DeadlockResolved":
            deadlocks += 1
        if "duration_ms" in p and "arm_id" in p and event.kind in (
            "PhaseComplete",
            "GripOk",
            "GripFail",
        ):
            busy_ms[p["arm_id"]] = busy_ms.get(p["arm_id"], 0) + p["duration_ms"]
            if event.kind == "PhaseComplete" and p.get("phase") == "travel":
                distance += p.get("length_m", 0.0)
    latencies = [completed[t] - submitted[t] for t in completed if t in submitted]
    mean = sum(latencies) / len(latencies) if latencies else 0.0
    return Metrics(
        tasks_submitted=len(submitted),
        tasks_completed=len(completed),
        tasks_failed=failed,
        mean_latency_ms=mean,
        p95_latency_ms=nearest_rank_percentile(latencies, 0.95),
        utilization={
            arm: (busy / end_ms if end_ms else 0.0) for arm, busy in sorted(busy_ms.items())
        },
        distance_m=distance,
        deadlocks_resolved=deadlocks,
    )


@dataclass
class SimResult:
    trace: list[Event]
    metrics: Metrics
    catalog: Catalog
    log: TransactionLog
    shelves: ShelfMap
    controller: LibraryController

    def trace_jsonl(self) -> str:
        return dump_trace(self.trace)


def run(
    scenario: Scenario,
    on_event: Optional[Callable[[Event, LibraryController], None]] = None,
) -> SimResult:
    """Execute a scenario to completion.

    Events are processed strictly in (time_ms, seq) order. Raises
    SimTimeBudgetExceeded if live tasks remain past the time budget or the
    event queue stalls with tasks unfinished.
    """
    queue = EventQueue()
    rng = scenario.layout.new_rng(scenario.seed)
    controller = LibraryController(
        scenario.layout, scenario.catalog, queue, rng, noise=scenario.noise
    )
    for request in scenario.requests:
        if request.op == "return":
            controller.submit_return(request.record or {}, request.at_ms)
        else:
            controller.submit_retrieve(
                request.barcode or "", request.kiosk_id or "", request.at_ms
            )
    budget = scenario.budget_ms if scenario.budget_ms is not None else default_budget_ms(scenario)
    trace: list[Event] = []
    while len(queue):
        event = queue.pop()
        if event.time_ms > budget and not controller.all_tasks_terminal():
            raise SimTimeBudgetExceeded(
                f"tasks still live at {event.time_ms} ms (budget {budget} ms)"
            )
        trace.append(event)
        controller.handle(event)
        if on_event is not None:
            on_event(event, controller)
    if not controller.all_tasks_terminal():
        raise SimTimeBudgetExceeded("event queue drained with live tasks (stall)")
    metrics = compute_metrics(trace, arm_ids=[a.id for a in scenario.layout.arms])
    return SimResult(
        trace=trace,
        metrics=metrics,
        catalog=controller.catalog,
        log=controller.log,
        shelves=controller.shelves,
        controller=controller,
    )
