"""Shared fixtures: prebuilt stacks for virtual- and real-time tests.

Also prints one ``[ACCEPTANCE] ...`` line per acceptance-criterion test so
the pass/fail status of each criterion is visible in the pytest output.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import pytest

from phasebridge.clocks import MonotonicClock, VirtualClock, VirtualLoop
from phasebridge.controller import ControllerServer, SignalControllerCore
from phasebridge.events import EventLog
from phasebridge.middleware import MiddlewareConfig, PhaseManager
from phasebridge.model import PhaseTiming, RingBarrierConfig, standard_eight_phase
from phasebridge.transport import LoopTransport, UdpTransport

# Compressed signal/middleware profile for wall-clock tests: full state
# machine, sub-second cycles.
FAST_TIMING = PhaseTiming(min_green=0.08, max_green=0.24, yellow=0.12, red_clearance=0.08)
FAST_MW = MiddlewareConfig(
    poll_hz=25.0,
    udp_timeout=0.5,
    transition_timeout=3.0,
    n_timeout=5,
    n_drift=5,
    verify_interval=0.02,
)


@pytest.fixture
def std_cfg() -> RingBarrierConfig:
    return standard_eight_phase()


@dataclass
class VirtualStack:
    cfg: RingBarrierConfig
    mcfg: MiddlewareConfig
    clock: VirtualClock
    loop: VirtualLoop
    core: SignalControllerCore
    events: EventLog
    manager: PhaseManager

    def run_for(self, seconds: float) -> None:
        self.loop.run_until(self.clock.now() + seconds)

    def kinds(self):
        return [r.kind for r in self.events.records()]


@pytest.fixture
def virtual_stack():
    """Factory for a fully wired in-process stack on a virtual clock."""
    built: list[VirtualStack] = []

    def build(
        cfg: RingBarrierConfig | None = None,
        mcfg: MiddlewareConfig | None = None,
        start: bool = True,
    ) -> VirtualStack:
        cfg = cfg or standard_eight_phase()
        mcfg = mcfg or MiddlewareConfig()
        clock = VirtualClock()
        loop = VirtualLoop(clock)
        core = SignalControllerCore(cfg, start_time=clock.now())
        transport = LoopTransport(core, clock, loop, timeout=mcfg.udp_timeout)
        events = EventLog(clock)
        manager = PhaseManager(cfg, mcfg, transport, clock, events, loop=loop)
        stack = VirtualStack(cfg, mcfg, clock, loop, core, events, manager)
        if start:
            manager.start()
        built.append(stack)
        return stack

    yield build
    for stack in built:
        stack.manager.stop()


@dataclass
class RealStack:
    cfg: RingBarrierConfig
    mcfg: MiddlewareConfig
    clock: MonotonicClock
    core: SignalControllerCore
    server: ControllerServer
    transport: UdpTransport
    events: EventLog
    manager: PhaseManager


@pytest.fixture
def real_stack():
    """Factory for a threaded stack over a loopback UDP socket."""
    built: list[RealStack] = []

    def build(
        cfg: RingBarrierConfig | None = None,
        mcfg: MiddlewareConfig | None = None,
    ) -> RealStack:
        cfg = cfg or standard_eight_phase(timing=FAST_TIMING)
        mcfg = mcfg or FAST_MW
        clock = MonotonicClock()
        core = SignalControllerCore(cfg, start_time=clock.now())
        server = ControllerServer(core, clock, port=0, control_port=0)
        server.start()
        transport = UdpTransport("127.0.0.1", server.port, timeout=mcfg.udp_timeout)
        events = EventLog(clock)
        manager = PhaseManager(cfg, mcfg, transport, clock, events)
        manager.start()
        stack = RealStack(cfg, mcfg, clock, core, server, transport, events, manager)
        built.append(stack)
        return stack

    yield build
    for stack in built:
        stack.manager.stop()
        stack.server.stop()


# ---------------------------------------------------------------------------
# Acceptance-criterion reporting
# ---------------------------------------------------------------------------

_config = None


def pytest_configure(config):
    # The terminal reporter does not exist yet at this point; keep the
    # config and look the reporter up when a result actually arrives.
    global _config
    _config = config


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call":
        outcome = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
    elif report.when == "setup" and report.failed:
        outcome = "FAIL"
    else:
        return
    m = re.search(r"::test_(c\d+[a-z]?)_([a-z0-9_]+)", report.nodeid)
    if not m:
        return
    line = f"[ACCEPTANCE] {m.group(1).upper()} {m.group(2).replace('_', '-')}: {outcome}"
    terminal = (
        _config.pluginmanager.get_plugin("terminalreporter") if _config else None
    )
    if terminal is not None:
        terminal.ensure_newline()
        terminal.write_line(line)
    else:  # pragma: no cover - fallback when run without a terminal
        print(line)
