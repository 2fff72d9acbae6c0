"""HTTP/JSON service boundary: hosts runs, streams events, accepts decisions.

Endpoints:
    POST /runs                         create (and start) a run
    GET  /runs/{id}                    run handle
    GET  /runs/{id}/events?from_seq=   server-sent event stream, resumable
    POST /runs/{id}/decision           supervisor decision for the pending request
    GET  /runs/{id}/artifacts/{path}   run artifacts (PCD/JSON/PGM)

One mutating run executes at a time per process (the scene is single-writer);
completed runs stay readable. Event logs are flushed per line, so a killed
process leaves an intact events.jsonl prefix and the run reloads as aborted.
"""

from __future__ import annotations

import json
import queue
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import FileResponse, JSONResponse, StreamingResponse

from . import executor, phantom, runlog
from .errors import ConfigError

TERMINAL_STATUSES = {"completed_detached", "budget_exhausted",
                     "aborted_by_supervisor", "failed_segmentation", "aborted"}


@dataclass
class RunHandle:
    run_id: str
    status: str
    current_cycle: int = 0
    pending: dict | None = None  # {kind, seq, payload}

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "status": self.status,
            "current_cycle": self.current_cycle,
            "pending": self.pending,
        }


class _RunState:
    def __init__(self, handle: RunHandle, run_dir: Path):
        self.handle = handle
        self.run_dir = run_dir
        self.thread: threading.Thread | None = None
        self.log: runlog.EventLog | None = None
        self.decision_event = threading.Event()
        self.decision: executor.Decision | None = None
        self.subscribers: list[queue.Queue] = []


class _GatewayChannel:
    """Blocks the executor thread until a supervisor decision arrives."""

    def __init__(self, manager: "RunManager", run_id: str, timeout: float | None):
        self.manager = manager
        self.run_id = run_id
        self.timeout = timeout

    def request(self, kind: str, payload: dict, seq: int) -> executor.Decision:
        state = self.manager._states[self.run_id]
        with self.manager.lock:
            state.handle.pending = {"kind": kind, "seq": seq, "payload": payload}
            state.handle.status = "awaiting_decision"
            state.decision_event.clear()
            state.decision = None
        ok = state.decision_event.wait(self.timeout)
        with self.manager.lock:
            state.handle.pending = None
            state.handle.status = "running"
            decision = state.decision
        if not ok or decision is None:
            return executor.Decision(verdict="approve", decided_by="system")
        return decision


class RunManager:
    """Owns run lifecycles, event fan-out, and the decision mailbox."""

    def __init__(self, data_dir, decision_timeout: float | None = None):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self._states: dict[str, _RunState] = {}
        self.decision_timeout = decision_timeout
        self._load_existing()

    def _load_existing(self):
        for d in sorted(self.data_dir.iterdir()) if self.data_dir.exists() else []:
            if d.is_dir() and (d / "events.jsonl").exists():
                status = runlog.run_status(d)
                handle = RunHandle(run_id=d.name, status=status)
                self._states[d.name] = _RunState(handle, d)

    def active_run(self) -> str | None:
        for rid, st in self._states.items():
            if st.handle.status in ("created", "running", "awaiting_decision"):
                return rid
        return None

    def create_run(self, phantom_spec: dict, run_config: dict,
                   run_id: str | None = None, autostart: bool = True) -> RunHandle:
        rid = run_id or uuid.uuid4().hex[:12]
        with self.lock:
            if rid in self._states:
                raise FileExistsError(f"run {rid} already exists")
            active = self.active_run()
            if active is not None:
                raise RuntimeError(f"run {active} is still active")
            trachea, tumor, resolution = phantom.load_phantom_spec(phantom_spec)
            phantom.validate_phantom(trachea, tumor)
            config = executor.RunConfig.from_dict(run_config)
            run_dir = self.data_dir / rid
            run_dir.mkdir(parents=True)
            runlog.write_json(run_dir / "phantom.json", phantom_spec)
            runlog.write_json(run_dir / "config.json", config.to_dict())
            handle = RunHandle(run_id=rid, status="created")
            state = _RunState(handle, run_dir)
            self._states[rid] = state
        if autostart:
            self.start(rid, trachea, tumor, resolution, config)
        return handle

    def start(self, rid: str, trachea, tumor, resolution, config):
        state = self._states[rid]
        scene = phantom.generate_phantom(trachea, tumor, resolution)
        channel = (
            executor.AutoApproveChannel()
            if config.headless
            else _GatewayChannel(self, rid, self.decision_timeout)
        )

        def target():
            orch = executor._Orchestrator(
                scene, config, channel, state.run_dir,
                phantom.phantom_spec_dict(trachea, tumor, resolution),
            )
            state.log = orch.log
            orch.log.subscribe(lambda ev: self._fan_out(rid, ev))
            with self.lock:
                state.handle.status = "running"
            record = orch.run()
            with self.lock:
                state.handle.status = record.status
                state.handle.current_cycle = len(record.cycles)

        state.thread = threading.Thread(target=target, daemon=True)
        state.thread.start()

    def _fan_out(self, rid: str, event: dict):
        state = self._states[rid]
        if event["kind"] == "cycle_started":
            state.handle.current_cycle = event["payload"]["cycle"]
        for q in list(state.subscribers):
            q.put(event)

    def handle_of(self, rid: str) -> RunHandle:
        if rid not in self._states:
            raise KeyError(rid)
        return self._states[rid].handle

    def events_snapshot(self, rid: str) -> list[dict]:
        state = self._states.get(rid)
        if state is None:
            raise KeyError(rid)
        if state.log is not None:
            return list(state.log.events)
        return runlog.read_events(state.run_dir)

    def subscribe(self, rid: str) -> queue.Queue:
        q: queue.Queue = queue.Queue()
        self._states[rid].subscribers.append(q)
        return q

    def unsubscribe(self, rid: str, q: queue.Queue):
        subs = self._states[rid].subscribers
        if q in subs:
            subs.remove(q)

    def submit_decision(self, rid: str, request_seq: int, verdict: str,
                        boxes: list[dict] | None) -> dict:
        state = self._states.get(rid)
        if state is None:
            raise KeyError(rid)
        with self.lock:
            pending = state.handle.pending
            if pending is None or pending["seq"] != request_seq:
                raise ValueError(
                    f"no pending request with seq {request_seq}"
                )
            state.decision = executor.Decision(
                verdict=verdict, boxes=boxes, decided_by="human"
            )
            state.decision_event.set()
        return {"ok": True, "run_id": rid, "request_seq": request_seq}

    def artifact_path(self, rid: str, rel: str) -> Path:
        state = self._states.get(rid)
        if state is None:
            raise KeyError(rid)
        base = state.run_dir.resolve()
        target = (base / rel).resolve()
        if not str(target).startswith(str(base)):
            raise ValueError("artifact path escapes the run directory")
        if not target.is_file():
            raise FileNotFoundError(rel)
        return target


def create_app(data_dir, decision_timeout: float | None = None,
               static_dir=None) -> FastAPI:
    manager = RunManager(data_dir, decision_timeout)
    app = FastAPI(title="resectsim gateway")
    app.state.manager = manager

    @app.middleware("http")
    async def cors(request: Request, call_next):
        if request.method == "OPTIONS":
            response = JSONResponse({})
        else:
            response = await call_next(request)
        response.headers["Access-Control-Allow-Origin"] = "*"
        response.headers["Access-Control-Allow-Headers"] = "content-type"
        response.headers["Access-Control-Allow-Methods"] = "GET,POST,OPTIONS"
        return response

    @app.post("/runs")
    async def create_run(body: dict):
        try:
            handle = await _to_thread(
                manager.create_run,
                body["phantom"],
                body.get("config", {}),
                body.get("run_id"),
            )
        except KeyError as exc:
            raise HTTPException(422, f"missing field {exc}")
        except FileExistsError as exc:
            raise HTTPException(409, str(exc))
        except RuntimeError as exc:
            raise HTTPException(409, str(exc))
        except ConfigError as exc:
            raise HTTPException(400, str(exc))
        return handle.to_dict()

    @app.get("/runs")
    async def list_runs():
        return [st.handle.to_dict() for st in manager._states.values()]

    @app.get("/runs/{rid}")
    async def get_run(rid: str):
        try:
            return manager.handle_of(rid).to_dict()
        except KeyError:
            raise HTTPException(404, f"unknown run {rid}")

    @app.get("/runs/{rid}/events")
    async def stream_events(rid: str, from_seq: int = 0):
        try:
            manager.handle_of(rid)
        except KeyError:
            raise HTTPException(404, f"unknown run {rid}")

        def gen():
            q = manager.subscribe(rid)
            try:
                snapshot = manager.events_snapshot(rid)
                last = from_seq - 1
                done = False
                for ev in snapshot:
                    if ev["seq"] <= last:
                        continue
                    last = ev["seq"]
                    yield f"id: {ev['seq']}\ndata: {json.dumps(ev)}\n\n"
                    if ev["kind"] == "run_complete":
                        done = True
                if not done and manager.handle_of(rid).status in TERMINAL_STATUSES:
                    done = True
                while not done:
                    try:
                        ev = q.get(timeout=30.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    if ev["seq"] <= last:
                        continue
                    last = ev["seq"]
                    yield f"id: {ev['seq']}\ndata: {json.dumps(ev)}\n\n"
                    if ev["kind"] == "run_complete":
                        done = True
            finally:
                manager.unsubscribe(rid, q)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.post("/runs/{rid}/decision")
    async def decision(rid: str, body: dict):
        try:
            return await _to_thread(
                manager.submit_decision,
                rid,
                int(body["request_seq"]),
                body["verdict"],
                body.get("boxes"),
            )
        except KeyError as exc:
            raise HTTPException(404, f"unknown run or field: {exc}")
        except ValueError as exc:
            raise HTTPException(409, str(exc))

    @app.get("/runs/{rid}/artifacts/{rel:path}")
    async def artifact(rid: str, rel: str):
        try:
            path = manager.artifact_path(rid, rel)
        except KeyError:
            raise HTTPException(404, f"unknown run {rid}")
        except (ValueError, FileNotFoundError):
            raise HTTPException(404, f"no artifact {rel}")
        return FileResponse(path)

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="console")

    return app


async def _to_thread(fn, *args):
    import anyio

    return await anyio.to_thread.run_sync(lambda: fn(*args))
