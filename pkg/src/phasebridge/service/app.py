"""HTTP facade over the middleware, controller and runner.

One live real-time session at a time — the session owns an embedded
controller on an ephemeral UDP port plus a manager polling it — alongside
fire-and-forget scenario runs executed on background threads.  The CLI's
``run --server``, ``recover`` and the interactive endpoints are all thin
wrappers over the same core package API.
"""
from __future__ import annotations

import json
import tempfile
import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..clocks import MonotonicClock
from ..configio import AppConfig, load_app_config, parse_app_config
from ..controller import ControllerEventWriter, ControllerServer, SignalControllerCore
from ..errors import ActionError, ConfigError, PhaseBridgeError, StateError
from ..events import EventLog, read_event_log
from ..middleware import PhaseManager
from ..model import Action, ActionKind, PhasePair
from ..report import hold_durations, kind_counts, latency_stats
from ..runner import FAULTS, RunSpec, execute_run
from ..transport import UdpTransport
from . import schemas

SESSION_HOST = "127.0.0.1"


class LiveSession:
    """Embedded controller + manager pair running in real time."""

    def __init__(self, app_cfg: AppConfig, fault: str, log_dir: Path | None) -> None:
        clock = MonotonicClock()
        self.writer = None
        events_path = None
        if log_dir is not None:
            log_dir.mkdir(parents=True, exist_ok=True)
            self.writer = ControllerEventWriter(log_dir / "controller.jsonl")
            events_path = log_dir / "events.jsonl"
        self.core = SignalControllerCore(
            app_cfg.signal, start_time=clock.now(), event_sink=self.writer
        )
        self.server = ControllerServer(self.core, clock, host=SESSION_HOST, port=0)
        if fault != "none":
            self.server.set_fault(FAULTS[fault])
        self.server.start()
        self.transport = UdpTransport(
            SESSION_HOST, self.server.port, timeout=app_cfg.middleware.udp_timeout
        )
        self.events = EventLog(clock, events_path)
        self.manager = PhaseManager(
            app_cfg.signal, app_cfg.middleware, self.transport, clock, self.events
        )
        self.manager.start()

    def stop(self) -> None:
        self.manager.stop()
        self.events.close()
        self.server.stop()
        if self.writer is not None:
            self.writer.close()

    def info(self) -> schemas.SessionInfo:
        snap = self.manager.snapshot()
        return schemas.SessionInfo(
            active=True,
            mode=snap["mode"],
            timeout_cause=snap["timeout_cause"],
            current_pair=snap["current_pair"],
            signal=snap["signal"],
            controller=self.server.snapshot(),
        )


class RunJob:
    def __init__(self, run_id: str, spec: RunSpec) -> None:
        self.run_id = run_id
        self.spec = spec
        self.state = "pending"
        self.exit_code: int | None = None
        self.metrics: dict | None = None
        self.error: str | None = None
        self.thread = threading.Thread(target=self._work, daemon=True)

    def _work(self) -> None:
        self.state = "running"
        try:
            result = execute_run(self.spec)
        except PhaseBridgeError as exc:
            self.state = "error"
            self.error = str(exc)
            return
        self.exit_code = result.exit_code
        self.metrics = result.metrics
        self.state = "done"

    def status(self) -> schemas.RunStatusResponse:
        return schemas.RunStatusResponse(
            run_id=self.run_id,
            state=self.state,
            exit_code=self.exit_code,
            metrics=self.metrics,
            error=self.error,
            out_dir=str(self.spec.out_dir),
        )


class ServiceState:
    def __init__(self, runs_dir: Path | None = None) -> None:
        self.lock = threading.Lock()
        self.session: LiveSession | None = None
        self.runs: dict[str, RunJob] = {}
        self.runs_dir = runs_dir


def _load_session_config(req: schemas.StartSessionRequest) -> AppConfig:
    if req.config is not None and req.config_path is not None:
        raise ConfigError("give either an inline config or a config_path, not both")
    if req.config is not None:
        return parse_app_config(req.config, source="<inline>")
    return load_app_config(req.config_path)


def create_app(runs_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="phasebridge", version=__version__)
    state = ServiceState(Path(runs_dir) if runs_dir else None)
    app.state.svc = state

    # -- health ----------------------------------------------------------

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(version=__version__)

    # -- live session ----------------------------------------------------

    @app.post("/session/start", response_model=schemas.SessionInfo)
    def session_start(req: schemas.StartSessionRequest) -> schemas.SessionInfo:
        with state.lock:
            if state.session is not None:
                raise HTTPException(409, "a session is already active")
            try:
                app_cfg = _load_session_config(req)
                state.session = LiveSession(
                    app_cfg, req.fault, Path(req.log_dir) if req.log_dir else None
                )
            except ConfigError as exc:
                raise HTTPException(422, str(exc)) from exc
            return state.session.info()

    @app.get("/session", response_model=schemas.SessionInfo)
    def session_state() -> schemas.SessionInfo:
        with state.lock:
            if state.session is None:
                return schemas.SessionInfo(active=False)
            return state.session.info()

    @app.post("/session/action", response_model=schemas.SubmitResponse)
    def session_action(req: schemas.ActionRequest) -> schemas.SubmitResponse:
        with state.lock:
            session = state.session
        if session is None:
            raise HTTPException(409, "no active session")
        action = Action(
            kind=ActionKind(req.kind),
            pair=None if req.pair is None else PhasePair(*req.pair),
            switch_bit=req.switch_bit,
            fraction=req.fraction,
        )
        try:
            result = session.manager.submit_action(action)
        except ActionError as exc:
            raise HTTPException(422, str(exc)) from exc
        return schemas.SubmitResponse(
            status=result.status.value,
            cmd=result.cmd,
            pair=None if result.command is None else result.command.pair.to_list(),
            hold_seconds=None if result.command is None else result.command.hold_seconds,
            reason=result.reason,
        )

    @app.post("/session/recover", response_model=schemas.RecoverResponse)
    def session_recover() -> schemas.RecoverResponse:
        with state.lock:
            session = state.session
        if session is None:
            raise HTTPException(409, "no active session")
        try:
            result = session.manager.recover()
        except StateError as exc:
            raise HTTPException(409, str(exc)) from exc
        return schemas.RecoverResponse(
            ok=result.ok,
            mode=result.mode.value,
            observed_greens=None
            if result.observed_greens is None
            else list(result.observed_greens),
            reason=result.reason,
        )

    @app.post("/session/fault", response_model=schemas.SessionInfo)
    def session_fault(req: schemas.FaultRequest) -> schemas.SessionInfo:
        with state.lock:
            if state.session is None:
                raise HTTPException(409, "no active session")
            state.session.server.set_fault(FAULTS[req.mode])
            return state.session.info()

    @app.get("/session/events", response_model=schemas.EventsResponse)
    def session_events(after: int = 0, limit: int = 500) -> schemas.EventsResponse:
        with state.lock:
            session = state.session
        if session is None:
            raise HTTPException(409, "no active session")
        records = session.events.records()
        window = records[after : after + max(0, limit)]
        return schemas.EventsResponse(
            total=len(records),
            events=[
                {"i": after + i, "t": r.t, "kind": r.kind.value, "detail": r.detail}
                for i, r in enumerate(window)
            ],
        )

    @app.post("/session/stop", response_model=schemas.SessionInfo)
    def session_stop() -> schemas.SessionInfo:
        with state.lock:
            if state.session is None:
                raise HTTPException(409, "no active session")
            state.session.stop()
            state.session = None
        return schemas.SessionInfo(active=False)

    # -- scenario runs ---------------------------------------------------

    @app.post("/runs", response_model=schemas.RunStatusResponse)
    def start_run(req: schemas.RunRequest) -> schemas.RunStatusResponse:
        run_id = uuid.uuid4().hex[:12]
        if state.runs_dir is not None:
            state.runs_dir.mkdir(parents=True, exist_ok=True)
            out_dir = Path(tempfile.mkdtemp(prefix=f"run-{run_id}-", dir=state.runs_dir))
        else:
            out_dir = Path(tempfile.mkdtemp(prefix=f"phasebridge-{run_id}-"))
        config_path = req.config_path
        if req.config is not None:
            if config_path is not None:
                raise HTTPException(422, "give either config or config_path, not both")
            inline = out_dir / "config.json"
            inline.write_text(json.dumps(req.config), encoding="utf-8")
            config_path = str(inline)
        spec = RunSpec(
            out_dir=out_dir,
            config_path=config_path,
            agent=req.agent,
            duration=req.duration,
            clock=req.clock,
            seed=req.seed,
            fault=req.fault,
            embedded=True,
        )
        try:
            # Validate before detaching so bad requests fail fast with 422.
            from ..runner import prepare

            prepare(spec)
        except ConfigError as exc:
            raise HTTPException(422, str(exc)) from exc
        job = RunJob(run_id, spec)
        with state.lock:
            state.runs[run_id] = job
        job.thread.start()
        return job.status()

    @app.get("/runs/{run_id}", response_model=schemas.RunStatusResponse)
    def run_status(run_id: str) -> schemas.RunStatusResponse:
        with state.lock:
            job = state.runs.get(run_id)
        if job is None:
            raise HTTPException(404, f"no run {run_id}")
        return job.status()

    @app.get("/runs", response_model=list[schemas.RunStatusResponse])
    def list_runs() -> list[schemas.RunStatusResponse]:
        with state.lock:
            jobs = list(state.runs.values())
        return [j.status() for j in jobs]

    # -- offline analysis ------------------------------------------------

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest) -> schemas.ReportResponse:
        try:
            records, skipped = read_event_log(req.events_path)
        except OSError as exc:
            raise HTTPException(422, f"cannot read {req.events_path}: {exc}") from exc
        rows, unmatched = latency_stats(records)
        return schemas.ReportResponse(
            latency=[
                schemas.LatencyRow(
                    action=r.action, n=r.n, mean_ms=r.mean_ms, std_ms=r.std_ms
                )
                for r in rows
            ],
            undispatched_commands=unmatched,
            skipped_lines=skipped,
            hold_durations=[h for _, h in hold_durations(records)],
            event_counts=kind_counts(records),
        )

    return app
