"""Task lifecycle and arm coordination.

The controller is the single writer for all library state. Simulation
events are handled one at a time in timestamp order; each handler updates
the catalog, shelf map, reservation table, and arm state machines, appends
transaction entries, and schedules follow-up events. The same controller
backs both file-driven simulation runs and the live kiosk service.

Coordination policy, in brief: tasks dispatch FIFO to the idle arm with
the shortest estimated route; an arm reserves each leg of its motion
program whole before departing; a request blocked by a parked idle arm
asks that arm to move aside; a cycle of mutually waiting arms is broken
by rerouting or retreating the arm doing the youngest work.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import arm as armmod
from .arm import (
    ArmState,
    EV_ASSIGN,
    EV_GRANTED,
    EV_GRIP_OK,
    EV_PHASE_DONE,
    GRIPPING,
    Phase,
    STANDBY,
    transition,
)
from .catalog import (
    BookRecord,
    BookState,
    Catalog,
    ShelfAddress,
    TransactionLog,
    is_valid_barcode,
    replay,
    sort_key,
)
from .errors import LibraryError, StateMachineViolation
from .events import Event, EventQueue
from .layout import Layout
from .railnet import GRANTED, NoRoute, Path, ReservationTable, shortest_route
from .rng import SplitMix64
from .shelving import NoEligibleLevel, ShelfFull, ShelfMap


class InvalidBarcode(LibraryError):
    code = "InvalidBarcode"


class BookNotShelved(LibraryError):
    code = "BookNotShelved"


class UnknownBarcode(LibraryError):
    code = "UnknownBarcode"


class BookNotReturnable(LibraryError):
    code = "BookNotReturnable"


class UnknownKiosk(LibraryError):
    code = "UnknownKiosk"


class UnknownTask(LibraryError):
    code = "UnknownTask"


# Submission rejections leave the book untouched; physical failures park
# the book for manual handling (and write a TaskFailed transaction).
REJECT_REASONS = (
    "InvalidBarcode",
    "BookNotShelved",
    "UnknownBarcode",
    "BookNotReturnable",
    "UnknownKiosk",
    "MissingRecord",
)
PHYSICAL_REASONS = ("GripFailure", "MissedBeacon", "NoEligibleLevel", "ShelfFull")

PENDING = "Pending"
ASSIGNED = "Assigned"
ACTIVE = "Active"
DONE = "Done"
FAILED = "Failed"


def _round_ms(value_ms: float) -> int:
    return int(value_ms + 0.5)


@dataclass
class Task:
    id: int
    kind: str  # "return" | "retrieve"
    barcode: str
    submitted_ms: int
    kiosk_id: Optional[str] = None
    address: Optional[ShelfAddress] = None
    state: str = PENDING
    arm_id: Optional[int] = None
    completed_ms: Optional[int] = None
    reason: Optional[str] = None

    @property
    def terminal(self) -> bool:
        return self.state in (DONE, FAILED)

    def to_json(self) -> dict:
        doc = {
            "id": self.id,
            "kind": self.kind,
            "barcode": self.barcode,
            "state": self.state,
            "submitted_ms": self.submitted_ms,
        }
        if self.kiosk_id is not None:
            doc["kiosk_id"] = self.kiosk_id
        if self.address is not None:
            doc["address"] = self.address.to_json()
        if self.arm_id is not None:
            doc["arm_id"] = self.arm_id
        if self.completed_ms is not None:
            doc["completed_ms"] = self.completed_ms
        if self.reason is not None:
            doc["reason"] = self.reason
        return doc


@dataclass
class NoiseParams:
    grip_fail_prob: float = 0.0
    beacon_miss_prob: float = 0.0
    pulse_jitter: float = 0.0  # multiplicative spread on pulse intervals

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseParams":
        return cls(
            grip_fail_prob=float(doc.get("grip_fail_prob", 0.0)),
            beacon_miss_prob=float(doc.get("beacon_miss_prob", 0.0)),
            pulse_jitter=float(doc.get("pulse_jitter", 0.0)),
        )

    @property
    def any(self) -> bool:
        return self.grip_fail_prob > 0 or self.beacon_miss_prob > 0 or self.pulse_jitter > 0


@dataclass
class ArmRuntime:
    """Everything the controller tracks about one arm."""

    id: int
    home: str
    node: str
    fsm: ArmState
    program: list[Phase] = field(default_factory=list)
    task_id: Optional[int] = None
    destination: Optional[str] = None  # final node of the active program
    reserved_leg_index: Optional[int] = None
    grip_attempts: int = 0
    phase_started_ms: int = 0
    episode_blocked: set[str] = field(default_factory=set)
    # Set while a deadlock victim sits out a retreat: the abandoned leg's
    # destination plus the program phases that followed it.
    suspended: Optional[tuple[str, list[Phase]]] = None
    waiting_for_segment: Optional[str] = None

    @property
    def idle(self) -> bool:
        return (
            self.fsm.kind == STANDBY
            and not self.program
            and self.task_id is None
            and self.suspended is None
        )

    @property
    def phase_index(self) -> int:
        return self.fsm.phase_index


class LibraryController:
    def __init__(
        self,
        layout: Layout,
        catalog: Catalog,
        queue: EventQueue,
        rng: SplitMix64,
        noise: NoiseParams | None = None,
    ):
        self.layout = layout
        self.graph = layout.graph
        self.params = layout.params
        self.grip_params = layout.grip_params
        self.ir_params = layout.ir_params
        self.catalog = catalog
        self.queue = queue
        self.rng = rng
        self.noise = noise or NoiseParams()
        self.log = TransactionLog()
        self.shelves = self._restore_shelves(layout, catalog)
        self.reservations = ReservationTable()
        self.tasks: dict[int, Task] = {}
        self._next_task_id = 1
        self._route_cache: dict[tuple[str, str, frozenset[str]], Path] = {}
        self._now = 0
        self._wake_queue: list[tuple[str, int]] = []  # (segment, arm id) FIFO
        self.deadlocks_resolved = 0

        intakes = self.graph.stations("intake")
        if not intakes:
            raise LibraryError("layout has no intake station")
        self.intake_node = intakes[0].id
        self.kiosk_ids = [n.id for n in self.graph.stations("kiosk")]

        self.arms: dict[int, ArmRuntime] = {}
        for spec in layout.arms:
            runtime = ArmRuntime(
                id=spec.id,
                home=spec.home_node,
                node=spec.home_node,
                fsm=ArmState(STANDBY, at_node=spec.home_node),
            )
            parking = self.graph.incident_edges(spec.home_node)[0].id
            if self.reservations.reserve(spec.id, (parking,)) != GRANTED:
                raise LibraryError(f"arm {spec.id} cannot park at {spec.home_node}")
            self.arms[spec.id] = runtime

    @staticmethod
    def _restore_shelves(layout: Layout, catalog: Catalog) -> ShelfMap:
        shelves = layout.new_shelf_map()
        for record in catalog.records():
            if record.state.kind == "Shelved":
                shelves.place(
                    record.state.address,
                    record.barcode,
                    sort_key(record, catalog.policy),
                    record.width_mm,
                )
            elif record.state.kind in ("Queued", "InTransit"):
                raise LibraryError(
                    f"initial catalog may not contain in-flight book {record.barcode}"
                )
        return shelves

    # ------------------------------------------------------------------
    # submission API (used by the scenario runner and the HTTP service)

    def allocate_task_id(self) -> int:
        task_id = self._next_task_id
        self._next_task_id += 1
        return task_id

    def check_return(self, record: BookRecord) -> None:
        existing = self.catalog.get(record.barcode)
        if existing and existing.state.kind in ("Queued", "InTransit", "Shelved"):
            raise BookNotReturnable(
                f"{record.barcode} is {existing.state.kind}; cannot be returned"
            )

    def check_retrieve(self, barcode: str, kiosk_id: str) -> None:
        if not is_valid_barcode(barcode):
            raise InvalidBarcode(barcode)
        if kiosk_id not in self.kiosk_ids:
            raise UnknownKiosk(kiosk_id)
        record = self.catalog.get(barcode)
        if record is None:
            raise UnknownBarcode(barcode)
        if record.state.kind != "Shelved":
            raise BookNotShelved(f"{barcode} is {record.state.kind}")

    def submit_return(self, record_doc: dict, at_ms: int) -> int:
        """Schedule a return scan for processing after the RF hop."""
        task_id = self.allocate_task_id()
        self.queue.schedule(
            at_ms + self.layout.rf_latency_ms,
            "TaskSubmitted",
            {"task_id": task_id, "op": "return", "record": record_doc},
        )
        return task_id

    def submit_retrieve(self, barcode: str, kiosk_id: str, at_ms: int) -> int:
        task_id = self.allocate_task_id()
        self.queue.schedule(
            at_ms + self.layout.rf_latency_ms,
            "TaskSubmitted",
            {"task_id": task_id, "op": "retrieve", "barcode": barcode, "kiosk_id": kiosk_id},
        )
        return task_id

    # ------------------------------------------------------------------
    # event dispatch

    def handle(self, event: Event) -> None:
        self._now = event.time_ms
        handler = _HANDLERS.get(event.kind)
        if handler:
            handler(self, event)

    def emit(self, kind: str, payload: dict) -> None:
        self.queue.schedule(self._now, kind, payload)

    # ------------------------------------------------------------------
    # submission processing

    def _on_task_submitted(self, event: Event) -> None:
        payload = event.payload
        task_id = payload["task_id"]
        if payload["op"] == "return":
            self._process_return(task_id, payload)
        else:
            self._process_retrieve(task_id, payload)
        self.dispatch()

    def _fail_task(self, task: Task, reason: str, arm_id: Optional[int] = None) -> None:
        """Fail a task via a TaskFailed event. Submit-time failures (no arm
        attached) flip the state immediately so dispatch never picks up a
        doomed task; failures of running tasks keep them Active until the
        event pops and the bookkeeping happens."""
        if arm_id is None:
            task.state = FAILED
            task.reason = reason
        payload = {"task_id": task.id, "reason": reason}
        if arm_id is not None:
            payload["arm_id"] = arm_id
        self.emit("TaskFailed", payload)

    def _process_return(self, task_id: int, payload: dict) -> None:
        doc = payload.get("record") or {}
        task = Task(
            id=task_id,
            kind="return",
            barcode=str(doc.get("barcode", "")),
            submitted_ms=self._now,
        )
        self.tasks[task_id] = task
        try:
            record = BookRecord.from_json(doc)
        except (LibraryError, KeyError, ValueError, TypeError):
            self._fail_task(task, "InvalidBarcode" if doc.get("barcode") else "MissingRecord")
            return
        try:
            self.check_return(record)
        except BookNotReturnable:
            self._fail_task(task, "BookNotReturnable")
            return
        # Accepted: the book is physically at the intake; record it, log it,
        # and pin down its shelf address right away.
        record = record.with_state(BookState.queued(task_id))
        self.catalog.upsert(record)
        self.log.record(self._now, "ReturnAccepted", record.barcode, task_id=task_id)
        try:
            address = self.shelves.assign_slot(
                record.barcode, record.width_mm, sort_key(record, self.catalog.policy)
            )
        except (NoEligibleLevel, ShelfFull) as exc:
            self._fail_task(task, exc.code)
            return
        task.address = address

    def _process_retrieve(self, task_id: int, payload: dict) -> None:
        barcode = str(payload.get("barcode", ""))
        kiosk_id = str(payload.get("kiosk_id", ""))
        task = Task(
            id=task_id,
            kind="retrieve",
            barcode=barcode,
            kiosk_id=kiosk_id,
            submitted_ms=self._now,
        )
        self.tasks[task_id] = task
        try:
            self.check_retrieve(barcode, kiosk_id)
        except LibraryError as exc:
            self._fail_task(task, exc.code)
            return
        record = self.catalog.get(barcode)
        task.address = record.state.address
        self.catalog.set_state(barcode, BookState.queued(task_id))
        self.log.record(
            self._now, "RetrievalRequested", barcode, task_id=task_id, kiosk_id=kiosk_id
        )

    # ------------------------------------------------------------------
    # dispatch

    def first_destination(self, task: Task) -> str:
        if task.kind == "return":
            return self.intake_node
        return self.graph.rack_port(task.address.rack).id

    def route(self, src: str, dst: str, blocked: frozenset[str] = frozenset()) -> Path:
        key = (src, dst, blocked)
        if key not in self._route_cache:
            self._route_cache[key] = shortest_route(self.graph, src, dst, self.params, blocked)
        return self._route_cache[key]

    def route_time(self, src: str, dst: str) -> Fraction:
        return self.route(src, dst).exact_time_s

    def dispatch(self) -> None:
        """Assign pending tasks FIFO to idle arms, nearest arm first."""
        while True:
            pending = [t for t in self.tasks.values() if t.state == PENDING]
            idle = [a for a in self.arms.values() if a.idle]
            if not pending or not idle:
                return
            task = min(pending, key=lambda t: t.id)
            dest = self.first_destination(task)
            chosen = min(idle, key=lambda a: (self.route_time(a.node, dest), a.id))
            self._assign(task, chosen)

    def _assign(self, task: Task, runtime: ArmRuntime) -> None:
        task.state = ASSIGNED
        task.arm_id = runtime.id
        runtime.task_id = task.id
        runtime.grip_attempts = 0
        runtime.program = self._build_task_program(task, runtime)
        runtime.reserved_leg_index = None
        runtime.destination = runtime.home
        runtime.fsm = ArmState(STANDBY, at_node=runtime.node, carried=runtime.fsm.carried)
        self.emit("ArmAssigned", {"task_id": task.id, "arm_id": runtime.id})
        self._advance(runtime)

    def _build_task_program(self, task: Task, runtime: ArmRuntime) -> list[Phase]:
        p = self.params
        g = self.grip_params
        pitch = self.shelves.level_spec(task.address.rack, task.address.level).pitch_mm
        rack_node = self.graph.rack_port(task.address.rack).id
        phases: list[Phase] = []
        if task.kind == "return":
            phases += armmod.travel_phases(self.route(runtime.node, self.intake_node), p)
            phases += armmod.station_action_phases(task.barcode, "grip", p, g)
            phases += armmod.travel_phases(self.route(self.intake_node, rack_node), p)
            phases += armmod.shelf_action_phases(task.address, pitch, task.barcode, "release", p, g)
            phases += armmod.travel_phases(self.route(rack_node, runtime.home), p)
        else:
            phases += armmod.travel_phases(self.route(runtime.node, rack_node), p)
            phases += armmod.shelf_action_phases(task.address, pitch, task.barcode, "grip", p, g)
            phases += armmod.travel_phases(self.route(rack_node, task.kiosk_id), p)
            phases += armmod.station_action_phases(task.barcode, "release", p, g)
            phases += armmod.travel_phases(self.route(task.kiosk_id, runtime.home), p)
        return phases

    # ------------------------------------------------------------------
    # program execution

    def _advance(self, runtime: ArmRuntime) -> None:
        """Start the next phase, reserving at leg boundaries; parks the arm
        when the program is exhausted."""
        if runtime.phase_index >= len(runtime.program):
            self._finish_program(runtime)
            return
        phase = runtime.program[runtime.phase_index]
        if phase.leg_segments is not None and runtime.reserved_leg_index != runtime.phase_index:
            self._request_leg(runtime, phase)
            return
        self._begin_phase(runtime, phase)

    def _request_leg(self, runtime: ArmRuntime, phase: Phase) -> None:
        segments = phase.leg_segments
        held_before = self.reservations.held_by(runtime.id)
        outcome = self.reservations.reserve(runtime.id, segments)
        if outcome == GRANTED:
            for stale in sorted(held_before - set(segments)):
                self.emit("SegmentReleased", {"arm_id": runtime.id, "segment": stale})
            runtime.episode_blocked.clear()
            self.emit(
                "SegmentReserved",
                {
                    "arm_id": runtime.id,
                    "segments": list(segments),
                    "leg_index": runtime.phase_index,
                    "task_id": runtime.task_id,
                },
            )
            return
        # Queued: wait parked in place, then see whether someone idle should
        # move aside or a deadlock just formed.
        runtime.fsm = ArmState(
            STANDBY,
            at_node=runtime.node,
            carried=runtime.fsm.carried,
            phase_index=runtime.phase_index,
        )
        request = self.reservations.pending_request(runtime.id)
        runtime.waiting_for_segment = request.waiting_on if request else None
        self._nudge_idle_holders(runtime)
        self._resolve_deadlocks()

    def _on_segment_reserved(self, event: Event) -> None:
        runtime = self.arms[event.payload["arm_id"]]
        leg_index = event.payload["leg_index"]
        runtime.reserved_leg_index = leg_index
        runtime.waiting_for_segment = None
        self._begin_phase(runtime, runtime.program[leg_index])

    def _begin_phase(self, runtime: ArmRuntime, phase: Phase) -> None:
        if runtime.fsm.kind == STANDBY:
            ev = EV_ASSIGN if runtime.phase_index == 0 else EV_GRANTED
            runtime.fsm = transition(runtime.fsm, ev, runtime.program)
        task = self.tasks.get(runtime.task_id) if runtime.task_id is not None else None
        if task is not None and task.state == ASSIGNED:
            task.state = ACTIVE
        runtime.phase_started_ms = self._now
        if phase.kind == "travel":
            if self.reservations.holder.get(phase.segment) != runtime.id:
                raise StateMachineViolation(
                    f"arm {runtime.id} moving over unreserved segment {phase.segment}"
                )
        if phase.kind == "grip":
            self._begin_grip(runtime, phase)
            return
        if phase.kind == "align":
            self._begin_align(runtime, phase)
            return
        self.queue.schedule(
            self._now + phase.duration_ms,
            "PhaseComplete",
            self._phase_payload(runtime, phase, phase.duration_ms),
        )

    def _phase_payload(self, runtime: ArmRuntime, phase: Phase, duration_ms: int) -> dict:
        payload = {
            "arm_id": runtime.id,
            "phase": phase.kind,
            "phase_index": runtime.phase_index,
            "started_ms": self._now,
            "duration_ms": duration_ms,
        }
        if phase.segment is not None:
            payload["segment"] = phase.segment
            payload["length_m"] = phase.length_m
            payload["to_node"] = phase.to_node
        if phase.steps is not None:
            payload["steps"] = phase.steps
        if phase.level is not None:
            payload["level"] = phase.level
        if phase.slot is not None:
            payload["slot"] = phase.slot
        if runtime.task_id is not None:
            payload["task_id"] = runtime.task_id
        return payload

    def _begin_grip(self, runtime: ArmRuntime, phase: Phase) -> None:
        g = self.grip_params
        fail = self.noise.grip_fail_prob > 0 and self.rng.chance(self.noise.grip_fail_prob)
        samples = self._grip_samples(fail)
        result = armmod.grip(samples, g)
        if result.ok == fail:  # the generated stream must reproduce the draw
            raise StateMachineViolation("grip stream disagrees with outcome draw")
        if self.noise.any:
            for t, f1, f2 in samples:
                if t > result.decided_ms:
                    break
                self.queue.schedule(
                    self._now + int(t),
                    "GripSample",
                    {"arm_id": runtime.id, "f1": round(f1, 3), "f2": round(f2, 3)},
                )
        self.queue.schedule(
            self._now + _round_ms(result.decided_ms),
            "GripOk" if result.ok else "GripFail",
            {
                "arm_id": runtime.id,
                "task_id": runtime.task_id,
                "barcode": phase.barcode,
                "attempt": runtime.grip_attempts + 1,
                "started_ms": self._now,
                "duration_ms": _round_ms(result.decided_ms),
                "phase": "grip",
                "phase_index": runtime.phase_index,
            },
        )

    def _grip_samples(self, fail: bool) -> list[tuple[float, float, float]]:
        g = self.grip_params
        samples = []
        horizon = g.timeout_ms if fail else g.hold_ms
        t = 0
        while t <= horizon:
            if fail:
                # One sensor never makes contact.
                f1 = 0.2 + (0.3 * self.rng.uniform() if self.noise.any else 0.0)
                f2 = g.f_min_newton + 0.5
            else:
                f1 = f2 = g.f_min_newton + 0.5
            samples.append((float(t), f1, f2))
            t += g.sample_period_ms
        return samples

    def _begin_align(self, runtime: ArmRuntime, phase: Phase) -> None:
        task = self.tasks.get(runtime.task_id) if runtime.task_id is not None else None
        pitch = (
            self.shelves.level_spec(task.address.rack, task.address.level).pitch_mm
            if task is not None and task.address is not None
            else 40
        )
        interval = armmod.pulse_interval_ms(pitch, self.params.hoist_speed_mps)
        needed = phase.pulses or 0
        miss = (
            needed > 0
            and self.noise.beacon_miss_prob > 0
            and self.rng.chance(self.noise.beacon_miss_prob)
        )
        times: list[float] = []
        t = 0.0
        count = int(self.rng.uniform() * needed) if miss else needed
        for _ in range(count):
            gap = interval
            if self.noise.pulse_jitter > 0:
                gap *= self.rng.jitter(self.noise.pulse_jitter)
            t += gap
            times.append(t)
        result = armmod.ir_align(0, needed, times, interval, self.ir_params)
        if result.ok == miss:
            raise StateMachineViolation("pulse stream disagrees with outcome draw")
        for i, pulse_t in enumerate(times[: result.pulses_seen]):
            self.queue.schedule(
                self._now + _round_ms(pulse_t),
                "BeaconPulse",
                {"arm_id": runtime.id, "pulse_index": i + 1},
            )
        if result.ok:
            duration = _round_ms(result.elapsed_ms)
            self.queue.schedule(
                self._now + duration,
                "PhaseComplete",
                self._phase_payload(runtime, phase, duration),
            )
        else:
            self.queue.schedule(
                self._now + _round_ms(result.elapsed_ms),
                "TaskFailed",
                {"task_id": runtime.task_id, "reason": "MissedBeacon", "arm_id": runtime.id},
            )

    # ------------------------------------------------------------------
    # phase completion

    def _on_phase_complete(self, event: Event) -> None:
        runtime = self.arms[event.payload["arm_id"]]
        phase = runtime.program[runtime.phase_index]
        runtime.fsm = transition(runtime.fsm, EV_PHASE_DONE, runtime.program, at_node=runtime.node)
        if phase.kind == "travel":
            runtime.node = phase.to_node
            runtime.fsm = ArmState(
                runtime.fsm.kind,
                at_node=phase.to_node,
                carried=runtime.fsm.carried,
                phase_index=runtime.fsm.phase_index,
            )
            self._release_behind(runtime, phase)
        elif phase.kind == "release":
            self._on_release_done(runtime)
        self._advance(runtime)

    def _release_behind(self, runtime: ArmRuntime, phase: Phase) -> None:
        """Free the segment just traversed unless the arm parks on it (it
        parks whenever the leg ends here)."""
        index = runtime.phase_index  # already advanced past the travel phase
        nxt = runtime.program[index] if index < len(runtime.program) else None
        leg_continues = nxt is not None and nxt.kind in ("travel", "rotate") and nxt.leg_segments is None
        if leg_continues:
            self.emit("SegmentReleased", {"arm_id": runtime.id, "segment": phase.segment})

    def _on_release_done(self, runtime: ArmRuntime) -> None:
        task = self.tasks.get(runtime.task_id) if runtime.task_id is not None else None
        if task is None or task.state == FAILED:
            return  # recovery deposit; the book is already flagged
        node = self.graph.nodes[runtime.node]
        if node.kind == "rack_port" and task.kind == "return":
            self.emit(
                "BookPlaced",
                {
                    "task_id": task.id,
                    "arm_id": runtime.id,
                    "barcode": task.barcode,
                    "address": task.address.to_json(),
                },
            )
        elif node.kind == "station" and task.kind == "retrieve":
            self.emit(
                "BookDelivered",
                {
                    "task_id": task.id,
                    "arm_id": runtime.id,
                    "barcode": task.barcode,
                    "kiosk_id": task.kiosk_id,
                },
            )

    def _on_grip_ok(self, event: Event) -> None:
        runtime = self.arms[event.payload["arm_id"]]
        runtime.grip_attempts = 0
        runtime.fsm = transition(runtime.fsm, EV_GRIP_OK, runtime.program)
        task = self.tasks.get(runtime.task_id) if runtime.task_id is not None else None
        if task is not None:
            node = self.graph.nodes[runtime.node]
            if node.kind == "rack_port" and task.kind == "retrieve":
                self.emit(
                    "BookPicked",
                    {
                        "task_id": task.id,
                        "arm_id": runtime.id,
                        "barcode": task.barcode,
                        "address": task.address.to_json(),
                    },
                )
            # An intake pickup is not a logged transaction; the book stays
            # Queued on its task until it is Shelved.
        self._advance(runtime)

    def _on_grip_fail(self, event: Event) -> None:
        runtime = self.arms[event.payload["arm_id"]]
        runtime.grip_attempts += 1
        if runtime.grip_attempts <= self.grip_params.max_retries:
            self._begin_phase(runtime, runtime.program[runtime.phase_index])
            return
        task = self.tasks[runtime.task_id]
        self._fail_task(task, "GripFailure", arm_id=runtime.id)

    # ------------------------------------------------------------------
    # book/task events

    def _on_book_picked(self, event: Event) -> None:
        p = event.payload
        addr = ShelfAddress.from_json(p["address"])
        self.shelves.release_slot(addr)
        self.catalog.set_state(p["barcode"], BookState.in_transit(p["arm_id"]))
        self.log.record(
            self._now, "Picked", p["barcode"], arm_id=p["arm_id"], task_id=p["task_id"], address=addr
        )

    def _on_book_placed(self, event: Event) -> None:
        p = event.payload
        addr = ShelfAddress.from_json(p["address"])
        self.catalog.set_state(p["barcode"], BookState.shelved(addr))
        self.log.record(self._now, "Shelved", p["barcode"], address=addr, task_id=p["task_id"])
        self._complete_task(p["task_id"])

    def _on_book_delivered(self, event: Event) -> None:
        p = event.payload
        self.catalog.set_state(p["barcode"], BookState.at_kiosk(p["kiosk_id"]))
        self.log.record(
            self._now, "Delivered", p["barcode"], task_id=p["task_id"], kiosk_id=p["kiosk_id"]
        )
        self._complete_task(p["task_id"])

    def _complete_task(self, task_id: int) -> None:
        task = self.tasks.get(task_id)
        if task is None:
            raise UnknownTask(str(task_id))
        task.state = DONE
        task.completed_ms = self._now
        self.emit("TaskCompleted", {"task_id": task_id})

    def _on_task_failed(self, event: Event) -> None:
        p = event.payload
        task = self.tasks.get(p["task_id"])
        if task is None:
            raise UnknownTask(str(p["task_id"]))
        reason = p["reason"]
        task.state = FAILED
        task.reason = reason
        task.completed_ms = self._now
        if reason in REJECT_REASONS:
            self.dispatch()
            return
        # Physical failure: park the book for manual handling and unwind
        # the arm that was working on it.
        record = self.catalog.get(task.barcode)
        if record is not None:
            self.catalog.set_state(task.barcode, BookState.manual_handling())
            self.log.record(self._now, "TaskFailed", task.barcode, task_id=task.id, reason=reason)
        if task.address is not None:
            occupant = self.shelves.occupant(task.address)
            if task.kind == "retrieve" and occupant == task.barcode:
                # The book stays physically in its slot; flag it for operators.
                self.shelves.flag_slot(task.address)
            elif task.kind == "return" and occupant == task.barcode:
                # Allocated but never filled; free the slot again.
                self.shelves.release_slot(task.address)
                if reason == "MissedBeacon":
                    self.shelves.flag_slot(task.address)
        arm_id = p.get("arm_id")
        if arm_id is not None:
            self._unwind_arm(self.arms[arm_id], task)
        self.dispatch()

    def _unwind_arm(self, runtime: ArmRuntime, task: Task) -> None:
        """Abort the active program: retract/lower as needed, deposit any
        carried book back at the intake, then head home."""
        p = self.params
        g = self.grip_params
        extend_ms = armmod.ms_half_up(p.extend_time_s)
        phases: list[Phase] = []
        at_rack = self.graph.nodes[runtime.node].kind == "rack_port"
        if runtime.fsm.kind == GRIPPING:
            phases.append(Phase(kind="retract", duration_ms=extend_ms))
        if at_rack and task.address is not None:
            phases.append(armmod.hoist_phase(task.address.level, p))
        carried = runtime.fsm.carried
        if carried is not None:
            # Bring the stranded book to the intake for operators.
            phases += armmod.travel_phases(self.route(runtime.node, self.intake_node), p)
            phases += armmod.station_action_phases(carried, "release", p, g)
            phases += armmod.travel_phases(self.route(self.intake_node, runtime.home), p)
        else:
            phases += armmod.travel_phases(self.route(runtime.node, runtime.home), p)
        runtime.task_id = None
        runtime.grip_attempts = 0
        self._swap_program(runtime, phases)

    def _swap_program(self, runtime: ArmRuntime, phases: list[Phase]) -> None:
        runtime.program = phases
        runtime.reserved_leg_index = None
        runtime.destination = runtime.home
        runtime.suspended = None
        self._wake_queue = [(s, a) for s, a in self._wake_queue if a != runtime.id]
        if not phases:
            self._finish_program(runtime)
            return
        first = phases[0]
        if first.leg_segments is not None:
            runtime.fsm = ArmState(
                STANDBY, at_node=runtime.node, carried=runtime.fsm.carried, phase_index=0
            )
            self._advance(runtime)
            return
        runtime.fsm = ArmState(
            armmod.phase_state_kind(first.kind),
            at_node=runtime.node,
            carried=runtime.fsm.carried,
            phase_index=0,
        )
        runtime.phase_started_ms = self._now
        self.queue.schedule(
            self._now + first.duration_ms,
            "PhaseComplete",
            self._phase_payload(runtime, first, first.duration_ms),
        )

    # ------------------------------------------------------------------
    # parking, retreat, and deadlock handling

    def _finish_program(self, runtime: ArmRuntime) -> None:
        runtime.program = []
        runtime.reserved_leg_index = None
        runtime.destination = None
        runtime.fsm = ArmState(STANDBY, at_node=runtime.node, carried=runtime.fsm.carried)
        if runtime.suspended is not None:
            # Retreat complete: pick the task back up; the reservation
            # machinery queues us fairly if the way is still contested.
            self._resume_suspended(runtime)
            return
        runtime.task_id = None
        self._nudge_all_waiters()
        self.dispatch()

    def _occupied_nodes(self) -> set[str]:
        return {a.node for a in self.arms.values()}

    def _claimed_nodes(self) -> set[str]:
        claims = set()
        for a in self.arms.values():
            if a.destination is not None:
                claims.add(a.destination)
            if a.suspended is not None:
                claims.add(a.suspended[0])
            task = self.tasks.get(a.task_id) if a.task_id is not None else None
            if task is not None and not task.terminal:
                if task.address is not None:
                    claims.add(self.graph.rack_port(task.address.rack).id)
                if task.kind == "return":
                    claims.add(self.intake_node)
                if task.kiosk_id:
                    claims.add(task.kiosk_id)
        return claims

    def _choose_retreat_target(
        self, runtime: ArmRuntime, blocked: set[str]
    ) -> Optional[tuple[str, Path]]:
        """Nearest reachable parking node nobody occupies, preferring nodes
        no active program claims. When everything is claimed, a claimed but
        empty spot still beats gridlock: whoever needs it later displaces
        us again, and each displacement costs real travel time, so the
        system keeps making progress."""
        occupied = self._occupied_nodes()
        claimed = self._claimed_nodes()
        for exclude in (occupied | claimed, occupied):
            candidates = []
            for node in self.graph.parking_nodes():
                if node == runtime.node or node in exclude:
                    continue
                try:
                    path = shortest_route(
                        self.graph, runtime.node, node, self.params, frozenset(blocked)
                    )
                except NoRoute:
                    continue
                candidates.append((path.exact_time_s, node, path))
            if candidates:
                candidates.sort(key=lambda c: (c[0], c[1]))
                _t, node, path = candidates[0]
                return node, path
        return None

    def _nudge_idle_holders(self, waiter: ArmRuntime) -> None:
        """Ask parked arms to move off segments a waiter needs. Fully idle
        holders retreat; parked deadlock victims resume their suspended
        task so the dependency shows up in the wait-for graph."""
        request = self.reservations.pending_request(waiter.id)
        if request is None:
            return
        for seg in request.segments:
            holder_id = self.reservations.holder.get(seg)
            if holder_id is None or holder_id == waiter.id:
                continue
            holder = self.arms[holder_id]
            if holder.idle:
                self._retreat(holder)
            elif (
                holder.suspended is not None
                and not holder.program
                and self.reservations.pending_request(holder_id) is None
            ):
                self._resume_suspended(holder)

    def _nudge_all_waiters(self) -> None:
        for arm_id in sorted(self.reservations.requests):
            self._nudge_idle_holders(self.arms[arm_id])

    def _retreat(self, runtime: ArmRuntime, blocked: set[str] | None = None) -> bool:
        choice = self._choose_retreat_target(runtime, blocked or set())
        if choice is None:
            return False
        node, path = choice
        runtime.program = armmod.travel_phases(path, self.params)
        runtime.reserved_leg_index = None
        runtime.destination = node
        runtime.fsm = ArmState(
            STANDBY, at_node=runtime.node, carried=runtime.fsm.carried, phase_index=0
        )
        self._advance(runtime)
        return True

    def _task_priority(self, arm_id: int) -> tuple[int, int]:
        runtime = self.arms[arm_id]
        # Taskless arms (home-bound or retreating) carry the cheapest work.
        task = runtime.task_id if runtime.task_id is not None else 1 << 60
        return (task, arm_id)

    def _resolve_deadlocks(self) -> None:
        while True:
            cycle = self.reservations.detect_deadlock()
            if not cycle:
                return
            victim_id = max(cycle, key=self._task_priority)
            victim = self.arms[victim_id]
            request = self.reservations.pending_request(victim_id)
            contested = request.waiting_on if request else None
            self.reservations.cancel(victim_id)
            victim.waiting_for_segment = None
            self.deadlocks_resolved += 1
            self.emit(
                "DeadlockResolved",
                {"cycle": list(cycle), "victim": victim_id, "segment": contested},
            )
            if contested is not None:
                victim.episode_blocked.add(contested)
            self._reroute_victim(victim, contested)

    def _leg_extent(self, runtime: ArmRuntime) -> tuple[int, int, str]:
        """(start, end) phase indices of the current travel leg plus its
        destination node."""
        program, start = runtime.program, runtime.phase_index
        end, dest = start, runtime.node
        while end < len(program):
            phase = program[end]
            if phase.kind not in ("travel", "rotate"):
                break
            if end > start and phase.leg_segments is not None:
                break
            if phase.kind == "travel":
                dest = phase.to_node
            end += 1
        return start, end, dest

    def _reroute_victim(self, victim: ArmRuntime, contested: Optional[str]) -> None:
        if victim.suspended is not None:
            # The blocked leg was itself a retreat; the real work is already
            # stashed in the suspension and must not be clobbered. Just find
            # somewhere else to wait.
            victim.program = []
            victim.reserved_leg_index = None
            victim.fsm = ArmState(
                STANDBY, at_node=victim.node, carried=victim.fsm.carried, phase_index=0
            )
            if contested is not None:
                self._wake_queue.append((contested, victim.id))
            if not self._retreat(victim, victim.episode_blocked):
                victim.destination = None
            return
        start, end, dest = self._leg_extent(victim)
        rest = victim.program[end:]
        try:
            path = shortest_route(
                self.graph, victim.node, dest, self.params, frozenset(victim.episode_blocked)
            )
        except NoRoute:
            path = None
        if path is not None:
            victim.program = armmod.travel_phases(path, self.params) + rest
            victim.reserved_leg_index = None
            victim.fsm = ArmState(
                STANDBY, at_node=victim.node, carried=victim.fsm.carried, phase_index=0
            )
            self._advance(victim)
            return
        # No alternative route: suspend the task, retreat if anywhere is
        # free, and retry when the contested segment releases.
        victim.suspended = (dest, rest)
        victim.program = []
        victim.reserved_leg_index = None
        victim.fsm = ArmState(
            STANDBY, at_node=victim.node, carried=victim.fsm.carried, phase_index=0
        )
        if contested is not None:
            self._wake_queue.append((contested, victim.id))
        if not self._retreat(victim, victim.episode_blocked):
            victim.destination = None

    # ------------------------------------------------------------------
    # segment release and wakeups

    def _on_segment_released(self, event: Event) -> None:
        arm_id = event.payload["arm_id"]
        seg = event.payload["segment"]
        granted = self.reservations.release(arm_id, (seg,))
        for granted_arm, segments in granted:
            runtime = self.arms[granted_arm]
            runtime.waiting_for_segment = None
            runtime.episode_blocked.clear()
            self.emit(
                "SegmentReserved",
                {
                    "arm_id": granted_arm,
                    "segments": list(segments),
                    "leg_index": runtime.phase_index,
                    "task_id": runtime.task_id,
                },
            )
        self._wake_suspended(seg)

    def _wake_suspended(self, seg: str) -> None:
        remaining: list[tuple[str, int]] = []
        woken: list[int] = []
        for wait_seg, arm_id in self._wake_queue:
            runtime = self.arms[arm_id]
            if wait_seg == seg and runtime.suspended is not None and not runtime.program:
                woken.append(arm_id)
            else:
                remaining.append((wait_seg, arm_id))
        self._wake_queue = remaining
        for arm_id in woken:
            self._resume_suspended(self.arms[arm_id])

    def _resume_suspended(self, runtime: ArmRuntime) -> None:
        dest, rest = runtime.suspended
        runtime.suspended = None
        runtime.episode_blocked.clear()
        self._wake_queue = [(s, a) for s, a in self._wake_queue if a != runtime.id]
        if runtime.node != dest:
            program = armmod.travel_phases(self.route(runtime.node, dest), self.params) + rest
        else:
            program = rest
        runtime.program = program
        runtime.reserved_leg_index = None
        runtime.destination = runtime.home
        runtime.fsm = ArmState(
            STANDBY, at_node=runtime.node, carried=runtime.fsm.carried, phase_index=0
        )
        self._advance(runtime)

    # ------------------------------------------------------------------
    # invariants (exercised per-event by tests and the acceptance suite)

    def check_consistency(self) -> None:
        """Catalog, shelf map, and transaction log must agree; every book
        sits in exactly one place."""
        states = self.catalog.states()
        occupancy = self.shelves.occupancy
        by_barcode: dict[str, ShelfAddress] = {}
        for addr, barcode in occupancy.items():
            if barcode in by_barcode:
                raise StateMachineViolation(f"{barcode} occupies two slots")
            by_barcode[barcode] = addr
        for barcode, state in states.items():
            if state.kind == "Shelved" and occupancy.get(state.address) != barcode:
                raise StateMachineViolation(
                    f"{barcode} Shelved at {state.address} but slot disagrees"
                )
        for addr, barcode in occupancy.items():
            state = states.get(barcode)
            if state is None:
                raise StateMachineViolation(f"slot {addr} holds unknown {barcode}")
            if state.kind == "Shelved" and state.address == addr:
                continue
            if state.kind in ("Queued", "InTransit"):
                task = self._task_for_book(barcode)
                if task is not None and task.address == addr:
                    continue
            if state.kind == "ManualHandling" and addr in self.shelves.flagged:
                continue
            raise StateMachineViolation(f"slot {addr} occupancy disagrees with {barcode} state")
        replayed = replay(self.log.entries())
        for barcode, state in replayed.items():
            if states.get(barcode) != state:
                raise StateMachineViolation(
                    f"replay gives {barcode} {state}, catalog has {states.get(barcode)}"
                )
        for runtime in self.arms.values():
            carried = runtime.fsm.carried
            if carried is not None and states[carried].kind not in (
                "Queued",  # return leg: picked from the intake tray
                "InTransit",
                "ManualHandling",
            ):
                raise StateMachineViolation(f"carried {carried} is {states[carried].kind}")

    def _task_for_book(self, barcode: str) -> Optional[Task]:
        live = [
            t for t in self.tasks.values() if t.barcode == barcode and not t.terminal
        ]
        return live[0] if live else None

    def all_tasks_terminal(self) -> bool:
        return all(t.terminal for t in self.tasks.values())


def _snake(kind: str) -> str:
    out = []
    for ch in kind:
        if ch.isupper() and out:
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


_HANDLERS = {
    kind: getattr(LibraryController, f"_on_{_snake(kind)}")
    for kind in (
        "TaskSubmitted",
        "SegmentReserved",
        "SegmentReleased",
        "PhaseComplete",
        "GripOk",
        "GripFail",
        "BookPicked",
        "BookPlaced",
        "BookDelivered",
        "TaskFailed",
    )
}
