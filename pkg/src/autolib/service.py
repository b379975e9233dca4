"""Kiosk/operator HTTP service over a live simulation.

One background thread owns the simulation: it advances the event queue
against the wall clock scaled by a speed factor, and executes API commands
(submissions, reads, speed changes) between events at the current
simulated time. That thread is the single writer; HTTP handler threads
only enqueue commands and wait for their results. Every processed event
fans out to subscribed server-sent-event streams.
"""

from __future__ import annotations

import json
import logging
import queue as queue_mod
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse

from .catalog import Catalog
from .errors import LibraryError
from .events import Event, EventQueue
from .layout import Layout
from .orchestrator import (
    BookNotReturnable,
    BookNotShelved,
    InvalidBarcode,
    LibraryController,
    UnknownBarcode,
    UnknownKiosk,
)
from .report import schematic_positions

log = logging.getLogger("autolib.service")


class _Command:
    def __init__(self, fn: Callable[[int], object]):
        self.fn = fn
        self.done = threading.Event()
        self.result: object = None
        self.error: Optional[BaseException] = None

    def run(self, now_ms: int) -> None:
        try:
            self.result = self.fn(now_ms)
        except BaseException as exc:  # handed back to the calling thread
            self.error = exc
        finally:
            self.done.set()

    def wait(self, timeout: float = 10.0) -> object:
        if not self.done.wait(timeout):
            raise TimeoutError("simulation thread did not answer")
        if self.error is not None:
            raise self.error
        return self.result


class LiveEngine:
    """Advances the event queue in wall time scaled by a speed factor."""

    def __init__(self, controller: LibraryController, queue: EventQueue, speed: float = 1.0):
        self.controller = controller
        self.queue = queue
        self.speed = max(1e-6, speed)
        self._cond = threading.Condition()
        self._commands: list[_Command] = []
        self._stop = False
        self._sim_anchor_ms = 0.0
        self._wall_anchor = time.monotonic()
        self._subscribers: list[queue_mod.Queue] = []
        self._thread = threading.Thread(target=self._loop, name="sim-loop", daemon=True)

    def start(self) -> None:
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._stop = True
            self._cond.notify()
        self._thread.join(timeout=5)

    def now_ms(self) -> int:
        return int(self._sim_anchor_ms + (time.monotonic() - self._wall_anchor) * 1000.0 * self.speed)

    def set_speed(self, factor: float) -> None:
        def change(_now: int) -> float:
            with self._cond:
                self._sim_anchor_ms = self.now_ms()
                self._wall_anchor = time.monotonic()
                self.speed = max(1e-6, factor)
            return self.speed

        self.call(change)

    def call(self, fn: Callable[[int], object], timeout: float = 10.0) -> object:
        """Run fn(now_ms) on the simulation thread and return its result."""
        command = _Command(fn)
        with self._cond:
            self._commands.append(command)
            self._cond.notify()
        return command.wait(timeout)

    def subscribe(self) -> queue_mod.Queue:
        subscriber: queue_mod.Queue = queue_mod.Queue(maxsize=1000)
        with self._cond:
            self._subscribers.append(subscriber)
        return subscriber

    def unsubscribe(self, subscriber: queue_mod.Queue) -> None:
        with self._cond:
            if subscriber in self._subscribers:
                self._subscribers.remove(subscriber)

    def _fan_out(self, event: Event) -> None:
        for subscriber in list(self._subscribers):
            try:
                subscriber.put_nowait(event)
            except queue_mod.Full:
                pass  # slow consumer; it reconciles via snapshot on reconnect

    def _loop(self) -> None:
        while True:
            with self._cond:
                if self._stop:
                    return
                commands, self._commands = self._commands, []
            now = self.now_ms()
            for command in commands:
                command.run(now)
            # Process everything due by the current simulated instant.
            processed = False
            while True:
                next_time = self.queue.peek_time()
                if next_time is None or next_time > self.now_ms():
                    break
                event = self.queue.pop()
                self.controller.handle(event)
                self._fan_out(event)
                processed = True
            if processed:
                continue
            with self._cond:
                if self._stop or self._commands:
                    continue
                next_time = self.queue.peek_time()
                if next_time is None:
                    self._cond.wait(timeout=0.25)
                else:
                    wall_delay = max(0.0, (next_time - self.now_ms()) / 1000.0 / self.speed)
                    self._cond.wait(timeout=min(wall_delay, 0.25))


class LibraryServer:
    """HTTP facade over a live simulated library."""

    def __init__(
        self,
        layout: Layout,
        catalog: Catalog,
        port: int = 8080,
        speed: float = 1.0,
        seed: int = 0,
        static_dir: str | Path | None = None,
    ):
        self.layout = layout
        queue = EventQueue()
        self.controller = LibraryController(layout, catalog, queue, layout.new_rng(seed))
        self.engine = LiveEngine(self.controller, queue, speed=speed)
        self.static_dir = Path(static_dir) if static_dir else _default_static_dir()
        handler = _make_handler(self)
        self.httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self.port = self.httpd.server_address[1]
        self.engine.start()

    def serve_forever(self) -> None:
        self.httpd.serve_forever(poll_interval=0.2)

    def shutdown(self) -> None:
        self.engine.stop()
        self.httpd.shutdown()
        self.httpd.server_close()

    # ------------------------------------------------------------------
    # command helpers (each runs on the simulation thread)

    def submit_return(self, record_doc: dict) -> int:
        return self.engine.call(lambda now: self._do_return(record_doc, now))

    def _do_return(self, record_doc: dict, now: int) -> int:
        from .catalog import BookRecord

        record = BookRecord.from_json(record_doc)  # raises on bad input
        self.controller.check_return(record)
        return self.controller.submit_return(record_doc, now)

    def submit_retrieve(self, barcode: str, kiosk_id: str) -> int:
        def do(now: int) -> int:
            self.controller.check_retrieve(barcode, kiosk_id)
            return self.controller.submit_retrieve(barcode, kiosk_id, now)

        return self.engine.call(do)

    def snapshot_books(self, filters: dict) -> list[dict]:
        def do(_now: int) -> list[dict]:
            records = self.controller.catalog.query(
                title=filters.get("title", ""),
                author=filters.get("author", ""),
                genre=filters.get("genre", ""),
            )
            return [{"record": r.to_json(), "state": r.state.to_json()} for r in records]

        return self.engine.call(do)

    def snapshot_task(self, task_id: int) -> Optional[dict]:
        def do(_now: int):
            task = self.controller.tasks.get(task_id)
            return task.to_json() if task else None

        return self.engine.call(do)

    def snapshot_tasks(self) -> list[dict]:
        return self.engine.call(
            lambda _now: [t.to_json() for t in sorted(self.controller.tasks.values(), key=lambda t: t.id)]
        )

    def snapshot_arms(self) -> list[dict]:
        def do(_now: int) -> list[dict]:
            out = []
            for runtime in sorted(self.controller.arms.values(), key=lambda a: a.id):
                out.append(
                    {
                        "id": runtime.id,
                        "node": runtime.node,
                        "state": runtime.fsm.kind,
                        "carried": runtime.fsm.carried,
                        "task_id": runtime.task_id,
                        "home": runtime.home,
                    }
                )
            return out

        return self.engine.call(do)

    def layout_document(self) -> dict:
        doc = dict(self.layout.doc)
        doc["positions"] = {
            node: list(pos) for node, pos in schematic_positions(self.layout.graph).items()
        }
        return doc


def _default_static_dir() -> Optional[Path]:
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.is_dir() else None


_STATIC_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".svg": "image/svg+xml",
    ".png": "image/png",
}


def _make_handler(server: LibraryServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("%s " + fmt, self.address_string(), *args)

        # -- helpers ---------------------------------------------------

        def _json(self, status: int, payload) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length", 0))
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length).decode("utf-8"))
            except json.JSONDecodeError:
                return {}

        # -- routes ----------------------------------------------------

        def do_GET(self):
            parsed = urlparse(self.path)
            route = parsed.path
            try:
                if route == "/api/books":
                    qs = parse_qs(parsed.query)
                    filters = {k: v[0] for k, v in qs.items()}
                    self._json(200, server.snapshot_books(filters))
                elif route.startswith("/api/tasks/"):
                    try:
                        task_id = int(route.rsplit("/", 1)[1])
                    except ValueError:
                        self._json(400, {"error": "bad task id"})
                        return
                    task = server.snapshot_task(task_id)
                    if task is None:
                        self._json(404, {"error": "unknown task"})
                    else:
                        self._json(200, task)
                elif route == "/api/tasks":
                    self._json(200, server.snapshot_tasks())
                elif route == "/api/arms":
                    self._json(200, server.snapshot_arms())
                elif route == "/api/layout":
                    self._json(200, server.layout_document())
                elif route == "/api/events":
                    self._stream_events()
                else:
                    self._static(route)
            except BrokenPipeError:
                pass
            except LibraryError as exc:
                self._json(400, {"error": exc.code, "detail": str(exc)})

        def do_POST(self):
            route = urlparse(self.path).path
            body = self._read_body()
            try:
                if route == "/api/returns":
                    task_id = server.submit_return(body.get("record", body))
                    self._json(200, {"task_id": task_id})
                elif route == "/api/requests":
                    task_id = server.submit_retrieve(
                        str(body.get("barcode", "")), str(body.get("kiosk_id", ""))
                    )
                    self._json(200, {"task_id": task_id})
                elif route == "/api/sim/speed":
                    factor = float(body.get("factor", 1.0))
                    server.engine.set_speed(factor)
                    self._json(200, {"factor": server.engine.speed})
                else:
                    self._json(404, {"error": "no such endpoint"})
            except UnknownBarcode as exc:
                self._json(404, {"error": exc.code, "detail": str(exc)})
            except BookNotShelved as exc:
                self._json(409, {"error": exc.code, "detail": str(exc)})
            except (InvalidBarcode, BookNotReturnable, UnknownKiosk) as exc:
                self._json(400, {"error": exc.code, "detail": str(exc)})
            except LibraryError as exc:
                self._json(400, {"error": exc.code, "detail": str(exc)})
            except (ValueError, TypeError) as exc:
                self._json(400, {"error": "BadRequest", "detail": str(exc)})

        def _stream_events(self):
            subscriber = server.engine.subscribe()
            try:
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(b": connected\n\n")
                self.wfile.flush()
                while True:
                    try:
                        event = subscriber.get(timeout=15.0)
                    except queue_mod.Empty:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
                        continue
                    data = json.dumps(event.to_json(), sort_keys=True)
                    chunk = f"event: {event.kind}\ndata: {data}\n\n"
                    self.wfile.write(chunk.encode("utf-8"))
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError, OSError):
                pass
            finally:
                server.engine.unsubscribe(subscriber)

        def _static(self, route: str):
            if server.static_dir is None:
                self._json(404, {"error": "no static assets built"})
                return
            name = "index.html" if route in ("/", "") else route.lstrip("/")
            path = (server.static_dir / name).resolve()
            if not str(path).startswith(str(server.static_dir.resolve())) or not path.is_file():
                self._json(404, {"error": "not found"})
                return
            body = path.read_bytes()
            self.send_response(200)
            self.send_header(
                "Content-Type", _STATIC_TYPES.get(path.suffix, "application/octet-stream")
            )
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

    return Handler
