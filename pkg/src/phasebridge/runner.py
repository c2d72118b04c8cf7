"""Run orchestration: wire a full stack together and execute one scenario.

This is the piece the CLI and the HTTP service share.  A run builds either
the all-virtual stack (in-process controller, simulated clock — minutes of
scenario in seconds of wall time) or the real-time stack (controller behind
a UDP socket, threads, wall-clock pacing), executes the scenario, and
leaves three artifacts in the output directory:

    events.jsonl       middleware event log
    controller.jsonl   controller event log (embedded runs)
    metrics.json       run summary

Exit codes mirror the CLI contract: 0 clean, 2 ended latched in TIMEOUT.
Configuration problems raise :class:`ConfigError` for the caller to map.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from .clocks import MonotonicClock, VirtualClock, VirtualLoop
from .configio import AppConfig, load_app_config
from .controller import (
    ControllerEventWriter,
    ControllerServer,
    FaultMode,
    SignalControllerCore,
)
from .errors import ConfigError
from .events import EventLog
from .middleware import PhaseManager
from .sim import AGENTS, ClockMode, RunLoop, TrafficModel, ScenarioConfig
from .transport import LoopTransport, UdpTransport

log = logging.getLogger(__name__)

DEFAULT_CONTROLLER_HOST = "127.0.0.1"
DEFAULT_CONTROLLER_PORT = 5601

FAULTS = {
    "none": FaultMode.NORMAL,
    "silent": FaultMode.SILENT,
    "reject": FaultMode.REJECT_CALLS,
}


@dataclass
class RunSpec:
    """Everything needed to execute one scenario run."""

    out_dir: Path
    config_path: str | None = None
    agent: str = "fixed"
    duration: float | None = None
    clock: str | None = None  # "virtual" | "real" (alias "real_time")
    seed: int | None = None
    embedded: bool = True
    host: str = DEFAULT_CONTROLLER_HOST
    port: int | None = None
    fault: str = "none"


@dataclass
class RunResult:
    exit_code: int
    metrics: dict
    events_path: Path
    controller_log_path: Path | None
    metrics_path: Path


def _resolve_clock_mode(name: str | None, fallback: ClockMode) -> ClockMode:
    if name is None:
        return fallback
    aliases = {"real": ClockMode.REAL_TIME, "real_time": ClockMode.REAL_TIME,
               "virtual": ClockMode.VIRTUAL}
    try:
        return aliases[name]
    except KeyError:
        raise ConfigError(f"unknown clock mode {name!r}") from None


def prepare(spec: RunSpec) -> tuple[AppConfig, ScenarioConfig, bool]:
    """Load config, fold in overrides; returns (config, scenario, embedded).

    A virtual-clock run always uses the in-process controller — an external
    one cannot share the simulated clock — so ``embedded`` is implied there
    and targeting a remote port is refused.
    """
    if spec.agent not in AGENTS:
        raise ConfigError(f"unknown agent {spec.agent!r}; choose from {sorted(AGENTS)}")
    if spec.fault not in FAULTS:
        raise ConfigError(f"unknown fault {spec.fault!r}; choose from {sorted(FAULTS)}")
    app = load_app_config(spec.config_path)
    scenario = app.scenario
    overrides: dict = {}
    if spec.duration is not None:
        overrides["duration"] = spec.duration
    if spec.seed is not None:
        overrides["seed"] = spec.seed
    mode = _resolve_clock_mode(spec.clock, scenario.clock_mode)
    overrides["clock_mode"] = mode
    scenario = replace(scenario, **overrides)
    embedded = spec.embedded
    if mode is ClockMode.VIRTUAL:
        if spec.port is not None and not spec.embedded:
            raise ConfigError(
                "a virtual-clock run cannot target an external controller; "
                "drop --port or switch to --clock real"
            )
        embedded = True
    if not embedded and spec.fault != "none":
        raise ConfigError(
            "--fault applies to the embedded controller; use the external "
            "controller's control channel instead"
        )
    return app, scenario, embedded


def execute_run(spec: RunSpec) -> RunResult:
    app, scenario, embedded = prepare(spec)
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    events_path = spec.out_dir / "events.jsonl"
    metrics_path = spec.out_dir / "metrics.json"
    controller_path = spec.out_dir / "controller.jsonl" if embedded else None

    if scenario.clock_mode is ClockMode.VIRTUAL:
        metrics = _run_virtual(app, scenario, spec, events_path, controller_path)
    else:
        metrics = _run_real_time(
            app, scenario, spec, events_path, controller_path, embedded
        )

    with open(metrics_path, "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    exit_code = 2 if metrics.get("ended_in_timeout") else 0
    return RunResult(exit_code, metrics, events_path, controller_path, metrics_path)


def _run_virtual(
    app: AppConfig,
    scenario: ScenarioConfig,
    spec: RunSpec,
    events_path: Path,
    controller_path: Path | None,
) -> dict:
    clock = VirtualClock()
    loop = VirtualLoop(clock)
    writer = ControllerEventWriter(controller_path) if controller_path else None
    core = SignalControllerCore(app.signal, start_time=clock.now(), event_sink=writer)
    if spec.fault != "none":
        core.set_fault(FAULTS[spec.fault], clock.now())
    transport = LoopTransport(core, clock, loop, timeout=app.middleware.udp_timeout)
    events = EventLog(clock, events_path)
    manager = PhaseManager(
        app.signal, app.middleware, transport, clock, events, loop=loop
    )
    traffic = TrafficModel(scenario, app.signal.phases)
    run_loop = RunLoop(manager, traffic, scenario, spec.agent, clock, loop=loop)
    try:
        manager.start()
        metrics = run_loop.run()
    finally:
        manager.stop()
        events.close()
        if writer is not None:
            writer.close()
    return metrics


def _run_real_time(
    app: AppConfig,
    scenario: ScenarioConfig,
    spec: RunSpec,
    events_path: Path,
    controller_path: Path | None,
    embedded: bool,
) -> dict:
    clock = MonotonicClock()
    server: ControllerServer | None = None
    writer: ControllerEventWriter | None = None
    if embedded:
        if controller_path is not None:
            writer = ControllerEventWriter(controller_path)
        core = SignalControllerCore(
            app.signal, start_time=clock.now(), event_sink=writer
        )
        if spec.fault != "none":
            core.set_fault(FAULTS[spec.fault], clock.now())
        # Port 0 lets the OS pick, so embedded runs never fight over 5601.
        server = ControllerServer(core, clock, host=spec.host, port=spec.port or 0)
        server.start()
        host, port = spec.host, server.port
    else:
        host, port = spec.host, spec.port or DEFAULT_CONTROLLER_PORT
    transport = UdpTransport(host, port, timeout=app.middleware.udp_timeout)
    events = EventLog(clock, events_path)
    manager = PhaseManager(app.signal, app.middleware, transport, clock, events)
    traffic = TrafficModel(scenario, app.signal.phases)
    run_loop = RunLoop(manager, traffic, scenario, spec.agent, clock)
    try:
        manager.start()
        metrics = run_loop.run()
    finally:
        manager.stop()
        events.close()
        if server is not None:
            server.stop()
        if writer is not None:
            writer.close()
    return metrics
