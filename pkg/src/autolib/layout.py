"""Layout document: shelves, rail network, arms, sensors, and power.

One JSON document describes the whole installation. Loading validates
every structural invariant up front so the simulator and service can
assume a well-formed world.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .arm import GripParams, IrParams
from .catalog import SortPolicy
from .errors import LayoutError
from .railnet import KinematicParams, RailGraph, build_graph
from .rng import SplitMix64, make_rng
from .shelving import ShelfMap

# Acceptable supply-bus band observed on the bench; configs outside it are
# rejected at load.
BUS_VOLTAGE_MIN = 19.0
BUS_VOLTAGE_MAX = 34.0

DEFAULT_RF_LATENCY_MS = 10


@dataclass(frozen=True)
class ArmSpec:
    id: int
    home_node: str


@dataclass
class Layout:
    doc: dict
    graph: RailGraph
    params: KinematicParams
    arms: list[ArmSpec]
    grip_params: GripParams
    ir_params: IrParams
    sort_policy: SortPolicy
    rf_latency_ms: int
    rng_name: str
    bus_voltage_v: float

    def new_shelf_map(self) -> ShelfMap:
        return ShelfMap.from_layout(self.doc)

    def new_rng(self, seed: int) -> SplitMix64:
        return make_rng(self.rng_name, seed)

    def resolve_node(self, name: str) -> str:
        """Accept a node id directly, or 'rack:N' for rack N's rail port."""
        if name in self.graph.nodes:
            return name
        if name.startswith("rack:"):
            try:
                rack = int(name.split(":", 1)[1])
            except ValueError:
                raise LayoutError(f"bad rack reference {name!r}")
            return self.graph.rack_port(rack).id
        raise LayoutError(f"unknown node {name!r}")


def load_layout(source: dict | str | Path) -> Layout:
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        doc = source
    try:
        shelf_map = ShelfMap.from_layout(doc)  # validates the racks section
        rail = doc["rail"]
        graph = build_graph(rail, rack_numbers=shelf_map.rack_numbers)
        params = KinematicParams.from_dict(rail["params"])
    except KeyError as exc:
        raise LayoutError(f"layout missing section {exc}") from exc
    except LayoutError:
        raise
    except Exception as exc:
        # Re-raise structural complaints from the section parsers with the
        # layout error type the loaders promise.
        if isinstance(exc, (ValueError, TypeError)):
            raise LayoutError(str(exc)) from exc
        raise

    arms = [ArmSpec(id=int(a["id"]), home_node=str(a["home_node"])) for a in doc.get("arms", [])]
    if not arms:
        raise LayoutError("layout needs at least one arm")
    if len({a.id for a in arms}) != len(arms):
        raise LayoutError("duplicate arm ids")
    parking = set(graph.parking_nodes())
    homes = set()
    for arm in arms:
        if arm.home_node not in graph.nodes:
            raise LayoutError(f"arm {arm.id} home {arm.home_node!r} not in rail graph")
        if arm.home_node not in parking:
            raise LayoutError(f"arm {arm.id} home must be a station or rack port")
        if arm.home_node in homes:
            raise LayoutError(f"two arms share home {arm.home_node!r}")
        homes.add(arm.home_node)

    sensors = doc.get("sensors", {})
    power = doc.get("power", {})
    voltage = float(power.get("bus_voltage_v", 24.0))
    if not BUS_VOLTAGE_MIN <= voltage <= BUS_VOLTAGE_MAX:
        raise LayoutError(
            f"bus voltage {voltage} V outside acceptable band "
            f"[{BUS_VOLTAGE_MIN}, {BUS_VOLTAGE_MAX}]"
        )

    return Layout(
        doc=doc,
        graph=graph,
        params=params,
        arms=sorted(arms, key=lambda a: a.id),
        grip_params=GripParams.from_dict(sensors.get("grip", {})),
        ir_params=IrParams.from_dict(sensors.get("ir", {})),
        sort_policy=SortPolicy.from_dict(doc.get("sort_policy", {})),
        rf_latency_ms=int(doc.get("rf_latency_ms", DEFAULT_RF_LATENCY_MS)),
        rng_name=str(doc.get("rng", SplitMix64.name)),
        bus_voltage_v=voltage,
    )
