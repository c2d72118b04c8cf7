"""Command-line entry point.

Subcommands:
    controller   run the virtual signal controller on a UDP socket
    run          execute a closed-loop scenario (local, or via --server)
    report       analyze an event log: latency table, holds, trajectories
    recover      ask a running service to recover its manager from TIMEOUT
    serve        start the HTTP service

Exit codes: 0 clean, 2 run ended latched in TIMEOUT, 3 configuration or
usage error.  Set PHASEBRIDGE_LOG=debug|info|... for diagnostics on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .configio import load_app_config
from .controller import ControllerEventWriter, ControllerServer, SignalControllerCore
from .clocks import MonotonicClock
from .errors import ConfigError, PhaseBridgeError
from .events import read_event_log
from .report import render_report, write_trajectories
from .runner import (
    DEFAULT_CONTROLLER_HOST,
    DEFAULT_CONTROLLER_PORT,
    FAULTS,
    RunSpec,
    execute_run,
)
from .sim import AGENTS

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_TIMEOUT = 2
EXIT_CONFIG = 3

DEFAULT_SERVER = "http://127.0.0.1:8000"


class _Parser(argparse.ArgumentParser):
    # Bad flags are a configuration problem; keep exit code 2 reserved for
    # timeout-terminated runs.
    def error(self, message: str):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="phasebridge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("controller", help="run the virtual controller")
    c.add_argument("--config", help="config JSON (default: bundled standard8)")
    c.add_argument("--host", default=DEFAULT_CONTROLLER_HOST)
    c.add_argument("--port", type=int, default=DEFAULT_CONTROLLER_PORT)
    c.add_argument(
        "--control-port",
        type=int,
        default=None,
        help="TCP side channel for fault injection (default: port+1; 0 disables)",
    )
    c.add_argument("--fault", choices=sorted(FAULTS), default="none")
    c.add_argument("--log-file", help="write controller events (JSONL) here")

    r = sub.add_parser("run", help="execute a scenario")
    r.add_argument("--config", help="config JSON (default: bundled standard8)")
    r.add_argument("--agent", choices=sorted(AGENTS), default="fixed")
    r.add_argument("--duration", type=float, help="override scenario duration (s)")
    r.add_argument("--clock", choices=["real", "virtual"], help="override clock mode")
    r.add_argument("--seed", type=int, help="override scenario seed")
    r.add_argument("--fault", choices=sorted(FAULTS), default="none",
                   help="inject a controller fault at start (embedded only)")
    r.add_argument("--embedded", action="store_true",
                   help="launch the controller in-process")
    r.add_argument("--host", default=DEFAULT_CONTROLLER_HOST,
                   help="external controller host")
    r.add_argument("--port", type=int, help="external controller port")
    r.add_argument("--out", default="runs/latest", help="output directory")
    r.add_argument("--server", help="delegate the run to a service at this URL")

    rep = sub.add_parser("report", help="analyze an event log")
    rep.add_argument("--events", required=True, help="events.jsonl to analyze")
    rep.add_argument("--out", help="also write per-command trajectories here")

    rec = sub.add_parser("recover", help="recover a service session from TIMEOUT")
    rec.add_argument("--server", default=DEFAULT_SERVER, help="service base URL")

    srv = sub.add_parser("serve", help="start the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    return p


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def cmd_controller(args) -> int:
    app = load_app_config(args.config)
    writer = ControllerEventWriter(args.log_file) if args.log_file else None
    clock = MonotonicClock()
    core = SignalControllerCore(app.signal, start_time=clock.now(), event_sink=writer)
    if args.fault != "none":
        core.set_fault(FAULTS[args.fault], clock.now())
    control_port = args.control_port
    if control_port is None:
        control_port = args.port + 1 if args.port else 0
    server = ControllerServer(
        core,
        clock,
        host=args.host,
        port=args.port,
        control_port=None if control_port == 0 else control_port,
    )
    server.start()
    print(f"controller on udp {args.host}:{server.port}", flush=True)
    if server.control_port is not None:
        print(f"control channel on tcp {args.host}:{server.control_port}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        if writer is not None:
            writer.close()
    return EXIT_OK


def cmd_run(args) -> int:
    if args.server:
        return _run_via_server(args)
    spec = RunSpec(
        out_dir=Path(args.out),
        config_path=args.config,
        agent=args.agent,
        duration=args.duration,
        clock=args.clock,
        seed=args.seed,
        embedded=args.embedded,
        host=args.host,
        port=args.port,
        fault=args.fault,
    )
    result = execute_run(spec)
    print(json.dumps(result.metrics, indent=2, sort_keys=True))
    print(f"events: {result.events_path}", file=sys.stderr)
    if result.exit_code == EXIT_TIMEOUT:
        cause = result.metrics.get("timeout_cause")
        print(f"run ended latched in TIMEOUT (cause: {cause})", file=sys.stderr)
    return result.exit_code


def _run_via_server(args) -> int:
    import httpx

    payload = {
        "agent": args.agent,
        "duration": args.duration,
        "clock": args.clock,
        "seed": args.seed,
        "fault": args.fault,
    }
    if args.config:
        payload["config"] = json.loads(Path(args.config).read_text(encoding="utf-8"))
    with httpx.Client(base_url=args.server, timeout=30.0) as client:
        resp = client.post("/runs", json=payload)
        resp.raise_for_status()
        run_id = resp.json()["run_id"]
        while True:
            status = client.get(f"/runs/{run_id}").json()
            if status["state"] in ("done", "error"):
                break
            time.sleep(0.5)
    if status["state"] == "error":
        print(f"run failed: {status.get('error')}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(status["metrics"], indent=2, sort_keys=True))
    return status.get("exit_code", EXIT_OK)


def cmd_report(args) -> int:
    try:
        records, skipped = read_event_log(args.events)
    except OSError as exc:
        raise ConfigError(f"cannot read event log {args.events}: {exc}") from exc
    print(render_report(records, skipped_lines=skipped))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        traj = out_dir / "trajectory.json"
        write_trajectories(traj, records)
        print(f"trajectories: {traj}", file=sys.stderr)
    return EXIT_OK


def cmd_recover(args) -> int:
    import httpx

    with httpx.Client(base_url=args.server, timeout=10.0) as client:
        resp = client.post("/session/recover")
        if resp.status_code == 409:
            print(f"precondition failed: {resp.json().get('detail')}", file=sys.stderr)
            return 1
        resp.raise_for_status()
        body = resp.json()
    if body["ok"]:
        print(f"recovered; mode={body['mode']} greens={body.get('observed_greens')}")
        return EXIT_OK
    print(
        f"recovery failed; still {body['mode']} ({body.get('reason')})",
        file=sys.stderr,
    )
    return 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


COMMANDS = {
    "controller": cmd_controller,
    "run": cmd_run,
    "report": cmd_report,
    "recover": cmd_recover,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("PHASEBRIDGE_LOG", "").upper()
    if level:
        logging.basicConfig(
            level=getattr(logging, level, logging.INFO),
            stream=sys.stderr,
            format="%(asctime)s %(name)s %(levelname)s %(message)s",
        )
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PhaseBridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
