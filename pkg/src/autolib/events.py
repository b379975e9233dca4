"""Simulation events: the totally ordered, replayable record of a run."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

EVENT_KINDS = (
    "TaskSubmitted",
    "ArmAssigned",
    "SegmentReserved",
    "SegmentReleased",
    "PhaseComplete",
    "BeaconPulse",
    "GripSample",
    "GripOk",
    "GripFail",
    "BookPlaced",
    "BookPicked",
    "BookDelivered",
    "TaskCompleted",
    "TaskFailed",
    "DeadlockResolved",
)


@dataclass(frozen=True, order=True)
class Event:
    time_ms: int
    seq: int
    kind: str = field(compare=False)
    payload: dict = field(compare=False, default_factory=dict)

    def to_json(self) -> dict:
        doc = {"time_ms": self.time_ms, "seq": self.seq, "kind": self.kind}
        doc.update(self.payload)
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "Event":
        payload = {k: v for k, v in doc.items() if k not in ("time_ms", "seq", "kind")}
        return cls(time_ms=int(doc["time_ms"]), seq=int(doc["seq"]), kind=doc["kind"], payload=payload)


def dump_trace(events: Iterable[Event]) -> str:
    """Canonical JSON Lines encoding; key order and separators are fixed so
    identical traces are byte-identical."""
    return "".join(
        json.dumps(e.to_json(), sort_keys=True, separators=(",", ":")) + "\n" for e in events
    )


def load_trace(text: str) -> list[Event]:
    return [Event.from_json(json.loads(line)) for line in text.splitlines() if line.strip()]


class EventQueue:
    """Priority queue ordered by (time_ms, seq); seq is the insertion
    counter, giving every event a unique, stable rank."""

    def __init__(self):
        self._heap: list[Event] = []
        self._next_seq = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time_ms: int, kind: str, payload: Optional[dict] = None) -> Event:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        event = Event(time_ms=time_ms, seq=self._next_seq, kind=kind, payload=payload or {})
        self._next_seq += 1
        heapq.heappush(self._heap, event)
        return event

    def peek_time(self) -> Optional[int]:
        return self._heap[0].time_ms if self._heap else None

    def pop(self) -> Event:
        return heapq.heappop(self._heap)

    def drain_due(self, now_ms: int) -> Iterator[Event]:
        while self._heap and self._heap[0].time_ms <= now_ms:
            yield heapq.heappop(self._heap)
