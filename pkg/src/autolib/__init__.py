"""Automated library: control core, deterministic simulator, kiosk service.

Books returned at an intake station are sorted, assigned width-eligible
shelf slots, and carried there by robotic arms riding a ceiling rail
network with rotating turntables; requested books travel the reverse way
to a kiosk. Everything runs inside a deterministic discrete-event
simulation with an append-only transaction log.
"""

__version__ = "0.1.0"

from .catalog import (
    BookRecord,
    BookState,
    Catalog,
    ShelfAddress,
    SortPolicy,
    TransactionEntry,
    TransactionLog,
    replay,
    sort_key,
    validate_barcode,
)
from .layout import Layout, load_layout
from .railnet import RailGraph, build_graph, rotation_steps, shortest_route
from .shelving import ShelfMap
from .sim import Metrics, Scenario, SimResult, compute_metrics, load_scenario, run

__all__ = [
    "BookRecord",
    "BookState",
    "Catalog",
    "Layout",
    "Metrics",
    "RailGraph",
    "Scenario",
    "ShelfAddress",
    "ShelfMap",
    "SimResult",
    "SortPolicy",
    "TransactionEntry",
    "TransactionLog",
    "build_graph",
    "compute_metrics",
    "load_layout",
    "load_scenario",
    "replay",
    "rotation_steps",
    "run",
    "shortest_route",
    "sort_key",
    "validate_barcode",
]
