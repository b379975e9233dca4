"""Independent brute-force oracles.

These deliberately reimplement the specified rules by direct enumeration,
sharing no code with the package implementations they check.
"""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Optional

from autolib.railnet import Edge, KinematicParams, Node, RailGraph
from autolib.shelving import ShelfMap


def oracle_rotation_steps(entry: int, exit_: int) -> int:
    """Count 90-degree steps by walking both rotation directions."""
    best = 99
    for direction in (1, -1):
        heading = (entry + 2) % 4  # facing out of the opposite port
        for steps in range(3):
            if heading == exit_:
                best = min(best, steps)
                break
            heading = (heading + direction) % 4
    return best


def enumerate_best_route(
    graph: RailGraph,
    src: str,
    dst: str,
    params: KinematicParams,
    blocked: frozenset[str] = frozenset(),
) -> Optional[tuple[Fraction, tuple[str, ...]]]:
    """Exhaustive DFS over all simple paths; returns (cost, edge ids) of the
    minimum, ties broken by lexicographically smallest edge-id sequence."""
    speed = Fraction(params.rail_speed_mps)
    t_rot = Fraction(params.t_rot_s)
    results: list[tuple[Fraction, tuple[str, ...]]] = []

    def walk(node: str, arrive_port: Optional[int], visited: set[str], cost: Fraction, edges: tuple[str, ...]):
        if node == dst:
            results.append((cost, edges))
            return
        for port in sorted(graph._adjacency[node]):
            edge = graph._adjacency[node][port]
            if edge.id in blocked:
                continue
            other, other_port = edge.other(node)
            if other in visited:
                continue
            extra = Fraction(edge.length_m) / speed
            if graph.nodes[node].kind == "turntable" and arrive_port is not None:
                extra += oracle_rotation_steps(arrive_port, port) * t_rot
            walk(other, other_port, visited | {other}, cost + extra, edges + (edge.id,))

    walk(src, None, {src}, Fraction(0), ())
    if not results:
        return None
    return min(results)


def random_rail_layout(rng: random.Random, max_nodes: int = 8) -> tuple[RailGraph, KinematicParams]:
    """Random connected layout: a spanning tree over turntables and leaves
    plus extra turntable-to-turntable edges while ports are free."""
    n_turntables = rng.randint(1, max(1, max_nodes - 2))
    # Capacity: 4 ports per table minus the tree edges linking the tables.
    leaf_room = 4 * n_turntables - 2 * (n_turntables - 1)
    n_leaves = rng.randint(2, max(2, min(max_nodes - n_turntables, leaf_room)))
    nodes = []
    for i in range(n_turntables):
        nodes.append(Node(id=f"t{i}", kind="turntable"))
    for i in range(n_leaves):
        kind = rng.choice(["station", "rack_port"])
        if kind == "station":
            nodes.append(Node(id=f"s{i}", kind="station", station=rng.choice(["intake", "kiosk"])))
        else:
            nodes.append(Node(id=f"s{i}", kind="rack_port", rack=i + 1))
    free_ports = {n.id: list(range(n.port_count)) for n in nodes}
    for ports in free_ports.values():
        rng.shuffle(ports)

    edges = []
    # Leaves must attach to turntables; build the tree turntables-first.
    order = [n for n in nodes if n.kind == "turntable"] + [n for n in nodes if n.kind != "turntable"]
    connected = [order[0]]
    for node in order[1:]:
        hosts = [c for c in connected if free_ports[c.id] and c.kind == "turntable"]
        if not hosts:
            hosts = [c for c in connected if free_ports[c.id]]
        host = rng.choice(hosts)
        edges.append(
            Edge(
                id=f"e{len(edges)}",
                a=(host.id, free_ports[host.id].pop()),
                b=(node.id, free_ports[node.id].pop()),
                length_m=rng.choice([0.5, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0]),
            )
        )
        connected.append(node)
    # Extra edges between turntables with free ports.
    for _ in range(rng.randint(0, 3)):
        tables = [n for n in nodes if n.kind == "turntable" and free_ports[n.id]]
        if len(tables) < 2:
            break
        a, b = rng.sample(tables, 2)
        edges.append(
            Edge(
                id=f"e{len(edges)}",
                a=(a.id, free_ports[a.id].pop()),
                b=(b.id, free_ports[b.id].pop()),
                length_m=rng.choice([0.5, 1.0, 1.5, 2.0]),
            )
        )
    params = KinematicParams(
        rail_speed_mps=rng.choice([0.5, 0.785, 1.0, 1.25]),
        t_rot_s=rng.choice([0.5, 1.0, 2.0, 3.0]),
        hoist_speed_mps=0.3,
        extend_time_s=1.0,
    )
    return RailGraph(nodes, edges), params


def oracle_insertion_point(occupied: list[tuple[int, str]], n_slots: int, key: str) -> int:
    """Earliest gap index minimizing order violations, by direct counting."""
    best_index, best_cost = 0, None
    for gap in range(n_slots + 1):
        cost = 0
        for pos, occ_key in occupied:
            if pos < gap and occ_key > key:
                cost += 1
            if pos >= gap and occ_key < key:
                cost += 1
        if best_cost is None or cost < best_cost:
            best_index, best_cost = gap, cost
    return best_index


def oracle_assign(shelves: ShelfMap, width_mm: int, key: str) -> Optional[tuple]:
    """Brute-force displacement argmin over every free eligible slot."""
    eligible = [
        (rack, level)
        for rack in shelves.rack_numbers
        for level in range(len(shelves.racks[rack - 1]))
        if shelves.fits(width_mm, rack, level)
    ]
    if not eligible:
        return None
    slots = shelves.eligible_slots(eligible)
    occupancy = shelves.occupancy
    occupied = []
    for pos, addr in enumerate(slots):
        barcode = occupancy.get(addr)
        if barcode is not None:
            occupied.append((pos, shelves._books[addr][1]))
    free = [
        pos
        for pos, addr in enumerate(slots)
        if addr not in occupancy and addr not in shelves.flagged
    ]
    if not free:
        return None
    ideal = oracle_insertion_point(occupied, len(slots), key)
    scored = []
    for pos in free:
        if pos >= ideal:
            between = sum(1 for p, _k in occupied if ideal <= p < pos)
        else:
            between = sum(1 for p, _k in occupied if pos < p < ideal)
        scored.append((between, pos < ideal, pos))
    scored.sort()
    _d, _before, pos = scored[0]
    return slots[pos]
