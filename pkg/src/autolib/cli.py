"""Command-line entry points.

Subcommands: simulate, serve, import, route, assign. Exit codes are a
stable scripting contract: 0 success, 1 domain error, 2 usage error.
LMS_LOG (error|warn|info|debug) controls verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .catalog import BookRecord, Catalog, sort_key, validate_barcode
from .errors import LibraryError
from .events import EventQueue
from .layout import load_layout
from .orchestrator import LibraryController
from .railnet import shortest_route
from .sim import load_scenario, run

log = logging.getLogger("autolib")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autolib",
        description="Automated library simulator and service",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a scenario file deterministically")
    p_sim.add_argument("scenario", help="scenario JSON path")
    p_sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_sim.add_argument("--out", default=None, help="metrics CSV path (default: stdout)")
    p_sim.add_argument("--trace", default=None, help="write the event trace JSONL here")
    p_sim.add_argument("--log", default=None, help="write the transaction log JSONL here")
    p_sim.add_argument("--plots", default=None, help="render report figures into this directory")

    p_serve = sub.add_parser("serve", help="serve the kiosk API over a live simulation")
    p_serve.add_argument("layout", help="layout JSON path")
    p_serve.add_argument("catalog", help="initial catalog JSONL path")
    p_serve.add_argument("--port", type=int, default=8080)
    p_serve.add_argument("--speed", type=float, default=1.0, help="simulated-time rate factor")
    p_serve.add_argument("--seed", type=int, default=0)

    p_import = sub.add_parser("import", help="import a CSV of books into a catalog file")
    p_import.add_argument("csv_path", help="CSV with header barcode,title,author,genre,width_mm")
    p_import.add_argument("catalog", help="catalog JSONL path to create or merge into")

    p_route = sub.add_parser("route", help="print the time-optimal route between nodes")
    p_route.add_argument("layout", help="layout JSON path")
    p_route.add_argument("--from", dest="src", required=True, help="node id or rack:N")
    p_route.add_argument("--to", dest="dst", required=True, help="node id or rack:N")
    p_route.add_argument("--block", action="append", default=[], help="segment to avoid (repeatable)")

    p_assign = sub.add_parser("assign", help="show the shelf slot a book would get")
    p_assign.add_argument("layout", help="layout JSON path")
    p_assign.add_argument("catalog", help="catalog JSONL path")
    p_assign.add_argument("barcode", help="barcode of a book in the catalog")
    return parser


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario, seed_override=args.seed)
    result = run(scenario)
    csv_text = result.metrics.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        log.info("metrics written to %s", args.out)
    else:
        sys.stdout.write(csv_text)
    if args.trace:
        Path(args.trace).write_text(result.trace_jsonl(), encoding="utf-8")
        log.info("trace written to %s (%d events)", args.trace, len(result.trace))
    if args.log:
        result.log.save(args.log)
        log.info("transaction log written to %s (%d entries)", args.log, len(result.log))
    if args.plots:
        from .report import render_report

        paths = render_report(
            result.trace, result.metrics, result.shelves, scenario.layout.graph, args.plots
        )
        log.info("figures: %s", ", ".join(p.name for p in paths))
    return 0


def cmd_serve(args) -> int:
    from .service import LibraryServer

    layout = load_layout(args.layout)
    catalog_path = Path(args.catalog)
    catalog = Catalog.load(catalog_path, layout.sort_policy) if catalog_path.exists() else Catalog(layout.sort_policy)
    server = LibraryServer(layout, catalog, port=args.port, speed=args.speed, seed=args.seed)
    print(f"serving on http://127.0.0.1:{server.port}/ (speed x{args.speed})", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def cmd_import(args) -> int:
    catalog_path = Path(args.catalog)
    catalog = Catalog.load(catalog_path) if catalog_path.exists() else Catalog()
    added = 0
    with open(args.csv_path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        required = {"barcode", "title", "author", "genre", "width_mm"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise LibraryError(
                f"CSV must have header {','.join(sorted(required))}; got {reader.fieldnames}"
            )
        for row in reader:
            record = BookRecord(
                barcode=validate_barcode(row["barcode"].strip()),
                title=row["title"].strip(),
                author=row["author"].strip(),
                genre=row["genre"].strip(),
                width_mm=int(row["width_mm"]),
            )
            catalog.upsert(record)
            added += 1
    catalog.save(catalog_path)
    print(f"imported {added} records into {catalog_path} ({len(catalog)} total)")
    return 0


def cmd_route(args) -> int:
    layout = load_layout(args.layout)
    src = layout.resolve_node(args.src)
    dst = layout.resolve_node(args.dst)
    path = shortest_route(layout.graph, src, dst, layout.params, blocked=set(args.block))
    print(f"route {src} -> {dst}: {path.total_time_s:.3f} s")
    for step in path.steps:
        print(f"  {step.edge_id}: {step.from_node} -> {step.to_node} ({step.length_m} m)")
    for node, steps in path.rotations():
        if steps:
            print(f"  rotate {steps * 90} deg at {node}")
    return 0


def cmd_assign(args) -> int:
    layout = load_layout(args.layout)
    catalog = Catalog.load(args.catalog, layout.sort_policy)
    record = catalog.get(validate_barcode(args.barcode))
    if record is None:
        raise LibraryError(f"barcode {args.barcode} not in catalog")
    controller = LibraryController(layout, catalog, EventQueue(), layout.new_rng(0))
    if record.state.kind == "Shelved":
        print(json.dumps({"barcode": record.barcode, "address": record.state.address.to_json(), "note": "already shelved"}))
        return 0
    address = controller.shelves.assign_slot(
        record.barcode, record.width_mm, sort_key(record, catalog.policy)
    )
    print(json.dumps({"barcode": record.barcode, "address": address.to_json()}))
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "serve": cmd_serve,
    "import": cmd_import,
    "route": cmd_route,
    "assign": cmd_assign,
}


def main(argv: list[str] | None = None) -> int:
    level = LOG_LEVELS.get(os.environ.get("LMS_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except LibraryError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
