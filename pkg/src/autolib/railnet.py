"""Ceiling rail network: graph model, routing, and segment reservations.

Arms travel on undirected rail segments joined by rotating turntables.
A turntable has up to four ports at 90 degree increments; redirecting an
arm from its entry port to a different exit port costs rotation time per
90 degree step. Routing is therefore port-aware: the cost of a path
depends on which port each segment attaches to.

Segments are the unit of mutual exclusion: each is held by at most one
arm, granted whole-path-at-a-time by the reservation table, with FIFO
queues and a wait-for graph for deadlock detection.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .errors import LibraryError

TURNTABLE_PORTS = 4


class Disconnected(LibraryError):
    code = "Disconnected"


class PortConflict(LibraryError):
    code = "PortConflict"


class DanglingEdge(LibraryError):
    code = "DanglingEdge"


class MissingRackPort(LibraryError):
    code = "MissingRackPort"


class NoRoute(LibraryError):
    code = "NoRoute"


class NotHolder(LibraryError):
    code = "NotHolder"


class UnknownNode(LibraryError):
    code = "UnknownNode"


def rotation_steps(entry_port: int, exit_port: int) -> int:
    """Minimal 90-degree rotations aligning an arm that entered through one
    port to leave through another. Opposite ports are a straight pass (0),
    adjacent ports need 1 step, and backing out the entry port needs 2."""
    a, b = entry_port, exit_port
    return min((b - a - 2) % 4, (a - b + 2) % 4)


@dataclass(frozen=True)
class Node:
    id: str
    kind: str  # "turntable" | "station" | "rack_port"
    station: Optional[str] = None  # "intake" | "kiosk" for stations
    rack: Optional[int] = None  # rack number for rack ports

    @property
    def port_count(self) -> int:
        return TURNTABLE_PORTS if self.kind == "turntable" else 1


@dataclass(frozen=True)
class Edge:
    id: str
    a: tuple[str, int]  # (node id, port)
    b: tuple[str, int]
    length_m: float

    def other(self, node_id: str) -> tuple[str, int]:
        if self.a[0] == node_id:
            return self.b
        if self.b[0] == node_id:
            return self.a
        raise LibraryError(f"edge {self.id} does not touch {node_id}")

    def port_at(self, node_id: str) -> int:
        if self.a[0] == node_id:
            return self.a[1]
        if self.b[0] == node_id:
            return self.b[1]
        raise LibraryError(f"edge {self.id} does not touch {node_id}")


@dataclass(frozen=True)
class PathStep:
    """One traversed segment: leave `from_node` through `depart_port`,
    arrive at `to_node` on `arrive_port`."""

    edge_id: str
    from_node: str
    to_node: str
    depart_port: int
    arrive_port: int
    length_m: float


@dataclass(frozen=True)
class Path:
    steps: tuple[PathStep, ...]
    exact_time_s: Fraction

    @property
    def total_time_s(self) -> float:
        return float(self.exact_time_s)

    @property
    def segments(self) -> tuple[str, ...]:
        return tuple(step.edge_id for step in self.steps)

    def rotations(self) -> list[tuple[str, int]]:
        """(turntable id, steps) at each intermediate node."""
        out = []
        for prev, nxt in zip(self.steps, self.steps[1:]):
            out.append((prev.to_node, rotation_steps(prev.arrive_port, nxt.depart_port)))
        return out

    @property
    def total_length_m(self) -> float:
        return sum(step.length_m for step in self.steps)


class RailGraph:
    def __init__(self, nodes: Sequence[Node], edges: Sequence[Edge]):
        self.nodes = {n.id: n for n in nodes}
        self.edges = {e.id: e for e in edges}
        self._adjacency: dict[str, dict[int, Edge]] = {n.id: {} for n in nodes}
        for edge in edges:
            for node_id, port in (edge.a, edge.b):
                node = self.nodes.get(node_id)
                if node is None:
                    raise DanglingEdge(f"edge {edge.id} references unknown node {node_id}")
                if not 0 <= port < node.port_count:
                    raise DanglingEdge(
                        f"edge {edge.id} uses port {port} on {node_id} "
                        f"({node.kind} has {node.port_count} ports)"
                    )
                if port in self._adjacency[node_id]:
                    raise PortConflict(f"two edges on {node_id} port {port}")
                self._adjacency[node_id][port] = edge
        for node in nodes:
            if node.kind in ("station", "rack_port") and len(self._adjacency[node.id]) != 1:
                raise PortConflict(
                    f"{node.kind} {node.id} must host exactly one edge, "
                    f"has {len(self._adjacency[node.id])}"
                )
        self._check_connected()

    def _check_connected(self) -> None:
        if not self.nodes:
            raise Disconnected("empty graph")
        start = next(iter(self.nodes))
        seen = {start}
        frontier = [start]
        while frontier:
            node_id = frontier.pop()
            for edge in self._adjacency[node_id].values():
                other, _port = edge.other(node_id)
                if other not in seen:
                    seen.add(other)
                    frontier.append(other)
        if len(seen) != len(self.nodes):
            missing = sorted(set(self.nodes) - seen)
            raise Disconnected(f"unreachable nodes: {', '.join(missing)}")

    def incident_edges(self, node_id: str) -> list[Edge]:
        return [self._adjacency[node_id][p] for p in sorted(self._adjacency[node_id])]

    def node(self, node_id: str) -> Node:
        if node_id not in self.nodes:
            raise UnknownNode(node_id)
        return self.nodes[node_id]

    def rack_port(self, rack: int) -> Node:
        for node in self.nodes.values():
            if node.kind == "rack_port" and node.rack == rack:
                return node
        raise MissingRackPort(f"no rack port for rack {rack}")

    def stations(self, station_kind: Optional[str] = None) -> list[Node]:
        out = [n for n in self.nodes.values() if n.kind == "station"]
        if station_kind:
            out = [n for n in out if n.station == station_kind]
        return sorted(out, key=lambda n: n.id)

    def parking_nodes(self) -> list[str]:
        """Degree-1 nodes where an arm may rest: stations and rack ports."""
        return sorted(
            n.id for n in self.nodes.values() if n.kind in ("station", "rack_port")
        )


def build_graph(rail_doc: dict, rack_numbers: Iterable[int] = ()) -> RailGraph:
    """Validate a layout "rail" section into a RailGraph. When rack numbers
    from the shelving layout are given, each must have exactly one rack
    port on the rail."""
    nodes = []
    for doc in rail_doc["nodes"]:
        kind = doc["kind"]
        if kind not in ("turntable", "station", "rack_port"):
            raise LibraryError(f"unknown node kind {kind!r}")
        nodes.append(
            Node(
                id=str(doc["id"]),
                kind=kind,
                station=doc.get("station"),
                rack=int(doc["rack"]) if doc.get("rack") is not None else None,
            )
        )
    if len({n.id for n in nodes}) != len(nodes):
        raise LibraryError("duplicate node ids")
    edges = []
    for doc in rail_doc["edges"]:
        length = float(doc["length_m"])
        if length <= 0:
            raise LibraryError(f"edge {doc['id']} must have positive length")
        edges.append(
            Edge(
                id=str(doc["id"]),
                a=(str(doc["a"]["node"]), int(doc["a"]["port"])),
                b=(str(doc["b"]["node"]), int(doc["b"]["port"])),
                length_m=length,
            )
        )
    if len({e.id for e in edges}) != len(edges):
        raise LibraryError("duplicate edge ids")
    graph = RailGraph(nodes, edges)
    for rack in rack_numbers:
        ports = [
            n for n in graph.nodes.values() if n.kind == "rack_port" and n.rack == rack
        ]
        if len(ports) != 1:
            raise MissingRackPort(
                f"rack {rack} needs exactly one rack port, found {len(ports)}"
            )
    return graph


@dataclass(frozen=True)
class KinematicParams:
    rail_speed_mps: float
    t_rot_s: float
    hoist_speed_mps: float
    extend_time_s: float
    level_height_m: float = 0.4

    def __post_init__(self):
        for name in ("rail_speed_mps", "t_rot_s", "hoist_speed_mps", "extend_time_s", "level_height_m"):
            if getattr(self, name) <= 0:
                raise LibraryError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "KinematicParams":
        return cls(
            rail_speed_mps=float(doc["rail_speed_mps"]),
            t_rot_s=float(doc["t_rot_s"]),
            hoist_speed_mps=float(doc["hoist_speed_mps"]),
            extend_time_s=float(doc["extend_time_s"]),
            level_height_m=float(doc.get("level_height_m", 0.4)),
        )


def shortest_route(
    graph: RailGraph,
    src: str,
    dst: str,
    params: KinematicParams,
    blocked: Iterable[str] = (),
) -> Path:
    """Time-minimal simple path from src to dst avoiding blocked segments.

    Cost is exact rational arithmetic: segment length over rail speed, plus
    rotation steps times the per-step time at every intermediate turntable.
    Ties break on the lexicographically smallest edge-id sequence. Uses a
    uniform-cost search over simple paths; walks that revisit a node are
    never considered, matching the physical rule that an arm does not lap
    the network to dodge a rotation.
    """
    graph.node(src)
    graph.node(dst)
    blocked_set = frozenset(blocked)
    speed = Fraction(params.rail_speed_mps)
    t_rot = Fraction(params.t_rot_s)
    if src == dst:
        return Path(steps=(), exact_time_s=Fraction(0))

    # Heap entries order by (cost, edge-id sequence); since extending a path
    # never lowers either component, the first pop at dst is minimal.
    heap: list[tuple[Fraction, tuple[str, ...], int, Optional[int], tuple[PathStep, ...], frozenset[str]]] = []
    counter = 0
    heap.append((Fraction(0), (), counter, None, (), frozenset({src})))
    while heap:
        cost, edge_seq, _n, arrive_port, steps, visited = heapq.heappop(heap)
        at = steps[-1].to_node if steps else src
        if at == dst:
            return Path(steps=steps, exact_time_s=cost)
        node = graph.nodes[at]
        for edge in graph.incident_edges(at):
            if edge.id in blocked_set:
                continue
            other, other_port = edge.other(at)
            if other in visited:
                continue
            depart_port = edge.port_at(at)
            extra = Fraction(edge.length_m) / speed
            if node.kind == "turntable" and arrive_port is not None:
                extra += rotation_steps(arrive_port, depart_port) * t_rot
            counter += 1
            step = PathStep(
                edge_id=edge.id,
                from_node=at,
                to_node=other,
                depart_port=depart_port,
                arrive_port=other_port,
                length_m=edge.length_m,
            )
            heapq.heappush(
                heap,
                (
                    cost + extra,
                    edge_seq + (edge.id,),
                    counter,
                    other_port,
                    steps + (step,),
                    visited | {other},
                ),
            )
    raise NoRoute(f"no route {src} -> {dst} avoiding {sorted(blocked_set)}")


@dataclass
class Reservation:
    arm: int
    segments: tuple[str, ...]
    waiting_on: Optional[str] = None  # segment whose queue holds this arm


GRANTED = "Granted"
QUEUED = "Queued"


class ReservationTable:
    """Single arbiter for segment ownership.

    Grants are all-or-nothing over a whole path. A blocked request parks
    its arm in the FIFO queue of the first unavailable segment and records
    wait-for edges to the holders of every unavailable segment it asked
    for; releases re-evaluate queues in FIFO order.
    """

    def __init__(self):
        self.holder: dict[str, int] = {}
        self.queues: dict[str, deque[int]] = {}
        self.requests: dict[int, Reservation] = {}

    def held_by(self, arm: int) -> set[str]:
        return {seg for seg, holder in self.holder.items() if holder == arm}

    def wait_for_edges(self) -> dict[int, set[int]]:
        edges: dict[int, set[int]] = {}
        for arm, req in self.requests.items():
            holders = set()
            for seg in req.segments:
                holder = self.holder.get(seg)
                if holder is not None and holder != arm:
                    holders.add(holder)
            if holders:
                edges[arm] = holders
        return edges

    def _available(self, arm: int, segments: Sequence[str]) -> Optional[str]:
        """First segment not grantable to the arm, or None."""
        for seg in segments:
            holder = self.holder.get(seg)
            if holder is not None and holder != arm:
                return seg
        return None

    def _grant(self, arm: int, segments: Sequence[str]) -> None:
        for seg in segments:
            current = self.holder.get(seg)
            if current is not None and current != arm:
                raise LibraryError(f"grant would double-book {seg}")  # pragma: no cover
            self.holder[seg] = arm

    def reserve(self, arm: int, segments: Sequence[str]) -> str:
        """Request a whole ordered segment set. Returns GRANTED or QUEUED;
        queuing is a normal outcome, not an error."""
        if arm in self.requests:
            raise LibraryError(f"arm {arm} already has a pending request")
        segments = tuple(segments)
        first_blocked = self._available(arm, segments)
        if first_blocked is None:
            self._grant(arm, segments)
            return GRANTED
        self.requests[arm] = Reservation(arm=arm, segments=segments, waiting_on=first_blocked)
        self.queues.setdefault(first_blocked, deque()).append(arm)
        return QUEUED

    def cancel(self, arm: int) -> None:
        """Withdraw a queued request (deadlock-victim path)."""
        req = self.requests.pop(arm, None)
        if req is None:
            return
        queue = self.queues.get(req.waiting_on)
        if queue and arm in queue:
            queue.remove(arm)

    def pending_request(self, arm: int) -> Optional[Reservation]:
        return self.requests.get(arm)

    def release(self, arm: int, segments: Sequence[str]) -> list[tuple[int, tuple[str, ...]]]:
        """Free held segments and hand them to queued requests in FIFO
        order. Returns the (arm, segments) grants that fired."""
        for seg in segments:
            if self.holder.get(seg) != arm:
                raise NotHolder(f"arm {arm} does not hold {seg}")
        granted: list[tuple[int, tuple[str, ...]]] = []
        for seg in segments:
            del self.holder[seg]
        for seg in segments:
            granted.extend(self._drain_queue(seg))
        return granted

    def _drain_queue(self, seg: str) -> list[tuple[int, tuple[str, ...]]]:
        granted = []
        queue = self.queues.get(seg)
        while queue:
            if seg in self.holder:
                break  # a grant in this pass took it again
            arm = queue[0]
            req = self.requests[arm]
            blocked = self._available(arm, req.segments)
            if blocked is None:
                queue.popleft()
                del self.requests[arm]
                self._grant(arm, req.segments)
                granted.append((arm, req.segments))
            elif blocked != seg:
                # Still stuck, but on a different segment now: move to that
                # queue so this one can serve the next waiter.
                queue.popleft()
                req.waiting_on = blocked
                self.queues.setdefault(blocked, deque()).append(arm)
            else:
                break
        return granted

    def detect_deadlock(self) -> Optional[list[int]]:
        """A cycle of mutually waiting arms, rotated so the smallest arm id
        comes first; None when the wait-for graph is acyclic."""
        edges = self.wait_for_edges()
        visiting: list[int] = []
        on_stack: set[int] = set()
        done: set[int] = set()

        def dfs(arm: int) -> Optional[list[int]]:
            visiting.append(arm)
            on_stack.add(arm)
            for nxt in sorted(edges.get(arm, ())):
                if nxt in on_stack:
                    cycle = visiting[visiting.index(nxt):]
                    pivot = cycle.index(min(cycle))
                    return cycle[pivot:] + cycle[:pivot]
                if nxt not in done:
                    found = dfs(nxt)
                    if found:
                        return found
            visiting.pop()
            on_stack.discard(arm)
            done.add(arm)
            return None

        for arm in sorted(edges):
            if arm not in done:
                cycle = dfs(arm)
                if cycle:
                    return cycle
        return None
