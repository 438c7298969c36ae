"""Headless driver and service entry points.

``run`` replays a line-delimited edit script against an engine (in-process
by default, or a TCP peer via --connect) and prints a JSON report; ``prover``
hosts the prover side over TCP; ``serve`` exposes the WebSocket bridge and
static assets for the browser client.  Wire traffic can be traced to a
JSONL file in either mode.  Formats are frozen in docs/formats.md.

No ``from __future__ import annotations`` here: the websocket endpoint's
parameter annotation must stay a live class for dependency injection to
resolve it (the framework import is local to build_app).
"""

import argparse
import json
import logging
import os
import socket
import socketserver
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from . import wire, yxml
from .document import EngineConfig, ProverEngine
from .session import EditorSession, MarkupQueryResult, Snapshot
from .span_parser import Insert, Remove

log = logging.getLogger("asyncdoc.cli")

EXIT_OK = 0
EXIT_SCRIPT_ERROR = 2
EXIT_TRANSPORT_ERROR = 3
EXIT_PORT_IN_USE = 4


class ScriptError(Exception):
    """The edit script file does not parse or a step is malformed."""


# --------------------------------------------------------------------------
# tracing


@dataclass
class Tracer:
    """Collects one record per chunk, in observation order, editor vantage."""

    records: deque = field(default_factory=deque)
    path: str | None = None
    _file: object = None
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def attach(self, channel: wire.Channel) -> wire.Channel:
        channel.on_write = lambda chunk: self.record("editor->prover", chunk)
        channel.on_read = lambda chunk: self.record("prover->editor", chunk)
        return channel

    def record(self, direction: str, chunk: bytes) -> None:
        rec = {
            "dir": direction,
            "bytes": len(chunk),
            "raw": chunk.decode("latin-1"),
            "xml": yxml.pretty(yxml.decode(chunk)),
            "ts": time.time(),
        }
        with self._lock:
            self.records.append(rec)
            if self.path:
                if self._file is None:
                    self._file = open(self.path, "w", encoding="utf-8")
                self._file.write(json.dumps(rec) + "\n")
                self._file.flush()

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.close()
                self._file = None


# --------------------------------------------------------------------------
# engine/session pairing


def in_process_pair(
    config: EngineConfig | None = None,
    executor=None,
    tracer: Tracer | None = None,
    node: str = "scratch.v",
) -> tuple[EditorSession, ProverEngine]:
    editor_side, prover_side = wire.channel_pair()
    if tracer:
        tracer.attach(editor_side)
    engine = ProverEngine(config, executor=executor)
    engine.serve(prover_side)
    session = EditorSession(editor_side, node=node)
    return session, engine


def connect_session(address: str, tracer: Tracer | None = None, node: str = "scratch.v") -> EditorSession:
    host, _, port = address.rpartition(":")
    sock = socket.create_connection((host or "127.0.0.1", int(port)))
    channel = wire.from_socket(sock)
    if tracer:
        tracer.attach(channel)
    return EditorSession(channel, node=node)


# --------------------------------------------------------------------------
# edit scripts


def parse_script(text: str) -> list[dict]:
    steps = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            step = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScriptError(f"line {lineno}: {exc}") from exc
        if not isinstance(step, dict) or len(step) != 1:
            raise ScriptError(f"line {lineno}: each step is one single-key object")
        kind, payload = next(iter(step.items()))
        if kind == "insert":
            if not isinstance(payload.get("offset"), int) or not isinstance(payload.get("text"), str):
                raise ScriptError(f"line {lineno}: insert needs offset:int and text:str")
        elif kind == "remove":
            if not isinstance(payload.get("offset"), int) or not isinstance(payload.get("length"), int):
                raise ScriptError(f"line {lineno}: remove needs offset:int and length:int")
        elif kind == "query":
            if not isinstance(payload.get("offset"), int):
                raise ScriptError(f"line {lineno}: query needs offset:int")
        elif kind == "await_quiescent":
            if not isinstance(payload, dict):
                raise ScriptError(f"line {lineno}: await_quiescent takes an object")
        else:
            raise ScriptError(f"line {lineno}: unknown step {kind!r}")
        steps.append(step)
    return steps


def _markup_json(result: MarkupQueryResult) -> dict:
    return {
        "state_text": result.state_text,
        "errors": [{"start": e.start, "end": e.end, "message": e.message} for e in result.errors],
        "links": [
            {
                "start": l.start,
                "end": l.end,
                "name": l.name,
                "def_command_id": l.def_command_id,
                "def_offset": l.def_offset,
                "def_end_offset": l.def_end_offset,
                "def_start": l.def_start,
                "def_end": l.def_end,
            }
            for l in result.links
        ],
        "span": [result.span_start, result.span_end],
        "command_id": result.command_id,
        "exec_id": result.exec_id,
    }


def _report_json(snapshot: Snapshot, queries: list[dict], node: str) -> dict:
    return {
        "node": node,
        "version": snapshot.version_id,
        "buffer": snapshot.buffer,
        "spans": [
            {
                "command_id": v.command_id,
                "text": v.text,
                "exec_id": v.exec_id,
                "status": v.status,
                "states": list(v.states),
                "errors": [{"start": e.start, "end": e.end, "message": e.message} for e in v.errors],
                "links": [
                    {
                        "start": l.start,
                        "end": l.end,
                        "name": l.name,
                        "def_command_id": l.def_command_id,
                        "def_offset": l.def_offset,
                        "def_end_offset": l.def_end_offset,
                        "def_start": l.def_start,
                        "def_end": l.def_end,
                    }
                    for l in v.links
                ],
            }
            for v in snapshot.spans
        ],
        "queries": queries,
    }


def run_script(
    steps: list[dict],
    config: EngineConfig | None = None,
    tracer: Tracer | None = None,
    connect: str | None = None,
    executor=None,
    node: str = "scratch.v",
    timeout: float = 30.0,
) -> dict:
    """Execute script steps and build the per-span report."""
    engine = None
    if connect:
        session = connect_session(connect, tracer=tracer, node=node)
    else:
        session, engine = in_process_pair(config, executor=executor, tracer=tracer, node=node)
    queries: list[dict] = []
    try:
        for step in steps:
            kind, payload = next(iter(step.items()))
            if kind == "insert":
                session.edit_buffer([Insert(payload["offset"], payload["text"])])
            elif kind == "remove":
                session.edit_buffer([Remove(payload["offset"], payload["length"])])
            elif kind == "await_quiescent":
                if not session.await_quiescent(timeout=payload.get("timeout", timeout)):
                    log.warning("await_quiescent timed out")
            elif kind == "query":
                result = session.query(payload["offset"])
                queries.append({"offset": payload["offset"], **_markup_json(result)})
        return _report_json(session.snapshot(), queries, node)
    finally:
        session.close()
        if engine is not None:
            engine.stop()
        if tracer:
            tracer.close()


# --------------------------------------------------------------------------
# TCP prover host


class _ProverServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, config: EngineConfig):
        self.engine_config = config
        super().__init__(address, _ProverHandler)


class _ProverHandler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        engine = ProverEngine(self.server.engine_config)
        engine.serve(wire.from_socket(self.request.dup()))
        engine.wait_closed()
        engine.stop()


def serve_prover(host: str, port: int, config: EngineConfig) -> _ProverServer:
    server = _ProverServer((host, port), config)
    thread = threading.Thread(target=server.serve_forever, name="prover-tcp", daemon=True)
    thread.start()
    return server


# --------------------------------------------------------------------------
# WebSocket bridge


def build_app(config: EngineConfig, assets_dir: str | None = None):
    """FastAPI app: one engine/session pair per WebSocket connection."""
    import asyncio

    from fastapi import FastAPI, WebSocket, WebSocketDisconnect
    from fastapi.responses import FileResponse, HTMLResponse
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="asyncdoc bridge")

    def spans_event(session: EditorSession) -> dict:
        snapshot = session.snapshot()
        return {
            "spans": {
                "buffer": snapshot.buffer,
                "version": snapshot.version_id,
                "revision": snapshot.revision,
                "spans": [
                    {
                        "command_id": v.command_id,
                        "start": v.start,
                        "end": v.end,
                        "status": v.status,
                        "exec_id": v.exec_id,
                        "errors": [[e.start, e.end] for e in v.errors],
                    }
                    for v in snapshot.spans
                ],
            }
        }

    @app.websocket("/ws")
    async def websocket_endpoint(ws: WebSocket):
        await ws.accept()
        tracer = Tracer()
        session, engine = in_process_pair(config, tracer=tracer)
        send_lock = asyncio.Lock()
        seen_revision = -1
        trace_sent = 0

        async def send(payload: dict) -> None:
            async with send_lock:
                await ws.send_text(json.dumps(payload))

        async def poller():
            nonlocal seen_revision, trace_sent
            while True:
                revision = session.revision
                if revision != seen_revision:
                    seen_revision = revision
                    await send(spans_event(session))
                while trace_sent < len(tracer.records):
                    rec = tracer.records[trace_sent]
                    trace_sent += 1
                    await send({"trace": rec})
                await asyncio.sleep(0.05)

        task = asyncio.create_task(poller())
        try:
            while True:
                frame = json.loads(await ws.receive_text())
                if "edit" in frame:
                    op = frame["edit"]
                    if "insert" in op:
                        session.edit_buffer([Insert(op["insert"]["offset"], op["insert"]["text"])])
                    elif "remove" in op:
                        session.edit_buffer([Remove(op["remove"]["offset"], op["remove"]["length"])])
                elif "query" in frame:
                    result = session.query(frame["query"]["offset"])
                    await send({"markup": {"offset": frame["query"]["offset"], **_markup_json(result)}})
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            task.cancel()
            session.close()
            engine.stop()

    if assets_dir and os.path.isdir(assets_dir):
        app.mount("/static", StaticFiles(directory=assets_dir), name="static")
        index = os.path.join(assets_dir, "index.html")

        @app.get("/")
        async def root():
            if os.path.exists(index):
                return FileResponse(index)
            return HTMLResponse("<h1>asyncdoc bridge</h1><p>No client assets built.</p>")

    else:

        @app.get("/")
        async def root_placeholder():
            return HTMLResponse("<h1>asyncdoc bridge</h1><p>No client assets built.</p>")

    return app


def _default_assets_dir() -> str | None:
    here = os.path.dirname(os.path.abspath(__file__))
    for candidate in (
        os.path.join(here, "..", "..", "frontend", "public"),
        os.path.join(os.getcwd(), "frontend", "public"),
    ):
        if os.path.isdir(candidate):
            return os.path.normpath(candidate)
    return None


# --------------------------------------------------------------------------
# entry point


def _engine_config(args) -> EngineConfig:
    return EngineConfig(workers=args.workers, deterministic=args.deterministic)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="asyncdoc")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="replay an edit script and print a JSON report")
    p_run.add_argument("script")
    p_run.add_argument("--connect", metavar="HOST:PORT", help="use a TCP prover instead of in-process")
    p_run.add_argument("--in-process", action="store_true", help="(default) run the prover in-process")
    p_run.add_argument("--workers", type=int, default=None)
    p_run.add_argument("--deterministic", action="store_true")
    p_run.add_argument("--trace", metavar="FILE", help="write one JSON record per chunk")
    p_run.add_argument("--timeout", type=float, default=30.0)

    p_prover = sub.add_parser("prover", help="host the prover side over TCP")
    p_prover.add_argument("--listen", metavar="HOST:PORT", default="127.0.0.1:4711")
    p_prover.add_argument("--workers", type=int, default=None)
    p_prover.add_argument("--deterministic", action="store_true")

    p_serve = sub.add_parser("serve", help="WebSocket bridge and browser client")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8555)
    p_serve.add_argument("--workers", type=int, default=None)
    p_serve.add_argument("--deterministic", action="store_true")
    p_serve.add_argument("--assets", default=None, help="directory with the built browser client")

    args = parser.parse_args(argv)
    logging.basicConfig(level=os.environ.get("ASYNCDOC_LOG", "WARNING").upper())

    if args.command == "run":
        try:
            with open(args.script, encoding="utf-8") as fh:
                steps = parse_script(fh.read())
        except (OSError, ScriptError) as exc:
            print(f"script error: {exc}", file=sys.stderr)
            return EXIT_SCRIPT_ERROR
        tracer = Tracer(path=args.trace) if args.trace else None
        try:
            report = run_script(
                steps,
                config=_engine_config(args),
                tracer=tracer,
                connect=args.connect,
                timeout=args.timeout,
            )
        except (OSError, wire.WireError) as exc:
            print(f"transport error: {exc}", file=sys.stderr)
            return EXIT_TRANSPORT_ERROR
        print(json.dumps(report, indent=2))
        return EXIT_OK

    if args.command == "prover":
        host, _, port = args.listen.rpartition(":")
        try:
            server = _ProverServer((host or "127.0.0.1", int(port)), _engine_config(args))
        except OSError as exc:
            print(f"cannot listen on {args.listen}: {exc}", file=sys.stderr)
            return EXIT_PORT_IN_USE
        print(f"prover listening on {args.listen}", file=sys.stderr)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        return EXIT_OK

    if args.command == "serve":
        import uvicorn

        assets = args.assets or _default_assets_dir()
        app = build_app(_engine_config(args), assets_dir=assets)
        probe = socket.socket()
        try:
            probe.bind((args.host, args.port))
        except OSError as exc:
            print(f"port {args.port} unavailable: {exc}", file=sys.stderr)
            return EXIT_PORT_IN_USE
        finally:
            probe.close()
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
        return EXIT_OK

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
