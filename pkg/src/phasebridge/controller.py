"""Virtual signal controller: a drop-in stand-in for cabinet hardware.

The :class:`SignalControllerCore` is a pure state machine driven by an
injected clock, so it behaves identically under a real UDP front end
(:class:`ControllerServer`) and under in-process virtual-time runs.  It
rests in green until a phase call arrives, then walks the fixed
yellow -> all-red -> green interval sequence, refusing any call that would
put conflicting phases in green together.

Signal-change events are stamped at the exact interval deadlines rather
than at the moment `advance` happens to run, so logged durations are not
smeared by polling cadence.
"""
from __future__ import annotations

import json
import logging
import socket
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Callable

from . import wire
from .errors import PhaseBridgeError
from .model import RingBarrierConfig
from .wire import DecodeError, MsgType, ObjectId, WireMessage

log = logging.getLogger(__name__)


class EnginePhase(Enum):
    RESTING = "resting"        # green displayed, min green satisfied
    MIN_GREEN = "min_green"    # green displayed, still inside min green
    YELLOW = "yellow"
    ALL_RED = "all_red"


class FaultMode(Enum):
    NORMAL = "normal"
    SILENT = "silent"              # drops every datagram on the floor
    REJECT_CALLS = "reject_calls"  # answers polls but refuses phase calls


@dataclass(frozen=True)
class ControllerEvent:
    """One line of the controller's own event log."""

    t: float
    event: str
    greens: tuple[int, ...]
    yellows: tuple[int, ...]
    reds: tuple[int, ...]
    info: dict

    def to_json(self) -> dict:
        d = {
            "t": self.t,
            "event": self.event,
            "greens": list(self.greens),
            "yellows": list(self.yellows),
            "reds": list(self.reds),
        }
        d.update(self.info)
        return d


class SignalControllerCore:
    """Clock-agnostic controller engine.

    Not thread-safe by itself; :class:`ControllerServer` serializes access
    in real-time mode and the virtual loop is single-threaded by design.
    """

    def __init__(
        self,
        cfg: RingBarrierConfig,
        start_time: float = 0.0,
        event_sink: Callable[[ControllerEvent], None] | None = None,
    ) -> None:
        self.cfg = cfg
        self.events: list[ControllerEvent] = []
        self._sink = event_sink
        self.fault = FaultMode.NORMAL
        # Power-up: rest in the first pair of the service sequence with the
        # minimum green already treated as served.
        first = cfg.sequence[0]
        self.active: tuple[int, ...] = tuple(sorted(first.phases))
        self.engine = EnginePhase.RESTING
        self.pending: frozenset[int] | None = None
        self._deadline: float | None = None
        self._emit(start_time, "startup")

    # -- display ------------------------------------------------------------

    def green_phases(self) -> tuple[int, ...]:
        if self.engine in (EnginePhase.RESTING, EnginePhase.MIN_GREEN):
            return self.active
        return ()

    def yellow_phases(self) -> tuple[int, ...]:
        if self.engine is EnginePhase.YELLOW:
            return self.active
        return ()

    def status_masks(self) -> tuple[int, int, int]:
        """(red, yellow, green) bitmasks of the current display."""
        greens = wire.phases_to_mask(self.green_phases())
        yellows = wire.phases_to_mask(self.yellow_phases())
        all_mask = wire.phases_to_mask(self.cfg.phases)
        reds = all_mask & ~(greens | yellows)
        return reds, yellows, greens

    def next_deadline(self) -> float | None:
        return self._deadline

    # -- time ---------------------------------------------------------------

    def advance(self, now: float) -> None:
        """Fire every interval deadline that has passed, in order."""
        while self._deadline is not None and self._deadline <= now:
            t = self._deadline
            if self.engine is EnginePhase.YELLOW:
                clearance = max(self.cfg.timing[p].red_clearance for p in self.active)
                self.active = ()
                self.engine = EnginePhase.ALL_RED
                self._deadline = t + clearance
                self._emit(t, "all_red_start")
            elif self.engine is EnginePhase.ALL_RED:
                assert self.pending, "entered all-red without a pending call"
                self.active = tuple(sorted(self.pending))
                self.pending = None
                self.engine = EnginePhase.MIN_GREEN
                self._deadline = t + max(
                    self.cfg.timing[p].min_green for p in self.active
                )
                self._emit(t, "green_start")
            elif self.engine is EnginePhase.MIN_GREEN:
                if self.pending:
                    self._begin_yellow(t)
                else:
                    self.engine = EnginePhase.RESTING
                    self._deadline = None
            else:  # pragma: no cover - RESTING never holds a deadline
                self._deadline = None

    def _begin_yellow(self, t: float) -> None:
        self.engine = EnginePhase.YELLOW
        self._deadline = t + max(self.cfg.timing[p].yellow for p in self.active)
        self._emit(t, "yellow_start")

    # -- phase calls --------------------------------------------------------

    def request_service(self, call: frozenset[int], now: float) -> tuple[str, int | None]:
        """Apply a vehicle call.  Returns (outcome, error_code).

        Outcome is "accepted", "no_op" (call matches what is already being
        served) or "rejected".  Any call that is empty, names an unknown
        phase, or would green conflicting phases together is rejected —
        regardless of controller state.
        """
        if not call or not all(p in self.cfg.ring_of for p in call):
            self._emit(now, "call_rejected", phases=sorted(call), code=wire.ERR_CONFLICTING_CALL)
            return "rejected", wire.ERR_CONFLICTING_CALL
        members = sorted(call)
        for i, a in enumerate(members):
            for b in members[i + 1 :]:
                if not self.cfg._entry(a, b):
                    self._emit(
                        now, "call_rejected", phases=members, code=wire.ERR_CONFLICTING_CALL
                    )
                    return "rejected", wire.ERR_CONFLICTING_CALL
        if self.fault is FaultMode.REJECT_CALLS:
            self._emit(now, "call_rejected", phases=members, code=wire.ERR_CONFLICTING_CALL)
            return "rejected", wire.ERR_CONFLICTING_CALL

        cs = frozenset(call)
        if self.engine in (EnginePhase.RESTING, EnginePhase.MIN_GREEN) and cs == set(
            self.active
        ):
            # Serving it already; also cancels any change latched earlier.
            self.pending = None
            self._emit(now, "call_noop", phases=members)
            return "no_op", None
        self.pending = cs
        if self.engine is EnginePhase.RESTING:
            self._begin_yellow(now)
        # MIN_GREEN: latched; the transition starts when min green expires.
        # YELLOW / ALL_RED: latest call wins the pending slot.
        self._emit(now, "call_accepted", phases=members)
        return "accepted", None

    # -- wire front end -----------------------------------------------------

    def handle_datagram(self, data: bytes, now: float) -> bytes | None:
        """Process one request frame; returns the response frame, if any."""
        self.advance(now)
        if self.fault is FaultMode.SILENT:
            return None
        try:
            msg = wire.decode(data)
        except DecodeError as exc:
            req_id = int.from_bytes(data[2:4], "big") if len(data) >= 4 else 0
            self._emit(now, "bad_frame", reason=exc.failure.value)
            return self._error(req_id, 0, wire.ERR_MALFORMED)
        if msg.msg_type is MsgType.GET:
            return self._handle_get(msg)
        if msg.msg_type is MsgType.SET:
            return self._handle_set(msg, now)
        # Response-type frames are not requests this endpoint serves.
        return self._error(msg.request_id, msg.object_id, wire.ERR_MALFORMED)

    def _handle_get(self, msg: WireMessage) -> bytes:
        reds, yellows, greens = self.status_masks()
        table = {
            ObjectId.STATUS_RED: reds,
            ObjectId.STATUS_YELLOW: yellows,
            ObjectId.STATUS_GREEN: greens,
            ObjectId.VEH_CALL: wire.phases_to_mask(self.pending or ()),
        }
        try:
            value = table[ObjectId(msg.object_id)]
        except ValueError:
            return self._error(msg.request_id, msg.object_id, wire.ERR_UNKNOWN_OBJECT)
        return wire.encode(
            WireMessage(
                MsgType.GET_RESPONSE, msg.request_id, msg.object_id, bytes([value])
            )
        )

    def _handle_set(self, msg: WireMessage, now: float) -> bytes:
        if msg.object_id != ObjectId.VEH_CALL:
            # Status objects are read-only and anything else is unknown.
            return self._error(msg.request_id, msg.object_id, wire.ERR_UNKNOWN_OBJECT)
        if len(msg.payload) != 1:
            return self._error(msg.request_id, msg.object_id, wire.ERR_MALFORMED)
        call = frozenset(wire.mask_to_phases(msg.payload[0]))
        outcome, code = self.request_service(call, now)
        if outcome == "rejected":
            assert code is not None
            return self._error(msg.request_id, msg.object_id, code)
        return wire.encode(
            WireMessage(MsgType.SET_RESPONSE, msg.request_id, msg.object_id, bytes([0x00]))
        )

    def _error(self, request_id: int, object_id: int, code: int) -> bytes:
        return wire.encode(
            WireMessage(MsgType.ERROR, request_id, object_id, bytes([code]))
        )

    # -- faults & events ----------------------------------------------------

    def set_fault(self, mode: FaultMode, now: float) -> None:
        self.fault = mode
        self._emit(now, "fault_mode", mode=mode.value)

    def _emit(self, t: float, event: str, **info) -> None:
        rec = ControllerEvent(
            t=t,
            event=event,
            greens=self.green_phases(),
            yellows=self.yellow_phases(),
            reds=tuple(
                p
                for p in sorted(self.cfg.phases)
                if p not in self.green_phases() and p not in self.yellow_phases()
            ),
            info=info,
        )
        self.events.append(rec)
        if self._sink is not None:
            self._sink(rec)


class ControllerEventWriter:
    """Writes controller events as line-delimited JSON, flushing per line."""

    def __init__(self, path: str | Path) -> None:
        self._fh: IO[str] = open(path, "w", encoding="utf-8")
        self._lock = threading.Lock()

    def __call__(self, rec: ControllerEvent) -> None:
        with self._lock:
            self._fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            self._fh.close()


def read_controller_log(path: str | Path) -> list[dict]:
    out: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


# ---------------------------------------------------------------------------
# Real-time front end
# ---------------------------------------------------------------------------


class ControllerServer:
    """UDP server exposing a :class:`SignalControllerCore` on a socket.

    A second, line-oriented TCP socket accepts out-of-band test commands
    (fault injection, state queries) so experiments can break the primary
    link while keeping a side channel open.
    """

    def __init__(
        self,
        core: SignalControllerCore,
        clock,
        host: str = "127.0.0.1",
        port: int = 5601,
        control_port: int | None = None,
        tick: float = 0.02,
    ) -> None:
        self.core = core
        self.clock = clock
        self.host = host
        self._tick = tick
        self._lock = threading.Lock()
        self._running = False
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host, port))
        self.port = self._sock.getsockname()[1]
        self._ctl_sock: socket.socket | None = None
        self.control_port: int | None = None
        if control_port is not None:
            self._ctl_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            self._ctl_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            self._ctl_sock.bind((host, control_port))
            self._ctl_sock.listen(4)
            self.control_port = self._ctl_sock.getsockname()[1]
        self._threads: list[threading.Thread] = []

    def start(self) -> None:
        self._running = True
        t = threading.Thread(target=self._serve_udp, name="ctrl-udp", daemon=True)
        t.start()
        self._threads.append(t)
        if self._ctl_sock is not None:
            t2 = threading.Thread(target=self._serve_control, name="ctrl-tcp", daemon=True)
            t2.start()
            self._threads.append(t2)
        log.info("controller listening on %s:%d", self.host, self.port)

    def stop(self) -> None:
        self._running = False
        try:
            self._sock.close()
        except OSError:
            pass
        if self._ctl_sock is not None:
            try:
                self._ctl_sock.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=1.0)

    # -- with the lock held -------------------------------------------------

    def set_fault(self, mode: FaultMode) -> None:
        with self._lock:
            self.core.set_fault(mode, self.clock.now())

    def snapshot(self) -> dict:
        with self._lock:
            self.core.advance(self.clock.now())
            return {
                "engine": self.core.engine.value,
                "greens": list(self.core.green_phases()),
                "yellows": list(self.core.yellow_phases()),
                "fault": self.core.fault.value,
            }

    # -- threads ------------------------------------------------------------

    def _serve_udp(self) -> None:
        while self._running:
            with self._lock:
                now = self.clock.now()
                self.core.advance(now)
                deadline = self.core.next_deadline()
            timeout = self._tick
            if deadline is not None:
                timeout = min(timeout, max(deadline - now, 0.001))
            self._sock.settimeout(timeout)
            try:
                data, addr = self._sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                break  # socket closed during shutdown
            with self._lock:
                resp = self.core.handle_datagram(data, self.clock.now())
            if resp is not None:
                try:
                    self._sock.sendto(resp, addr)
                except OSError:
                    break

    def _serve_control(self) -> None:
        assert self._ctl_sock is not None
        while self._running:
            try:
                conn, _ = self._ctl_sock.accept()
            except OSError:
                break
            threading.Thread(
                target=self._control_session, args=(conn,), daemon=True
            ).start()

    def _control_session(self, conn: socket.socket) -> None:
        faults = {
            "normal": FaultMode.NORMAL,
            "silent": FaultMode.SILENT,
            "reject": FaultMode.REJECT_CALLS,
        }
        with conn, conn.makefile("rw", encoding="utf-8") as fh:
            for line in fh:
                words = line.strip().split()
                if not words:
                    continue
                try:
                    if words[0] == "ping":
                        fh.write("ok\n")
                    elif words[0] == "state":
                        fh.write("ok " + json.dumps(self.snapshot(), sort_keys=True) + "\n")
                    elif words[0] == "fault" and len(words) == 2 and words[1] in faults:
                        self.set_fault(faults[words[1]])
                        fh.write("ok\n")
                    else:
                        fh.write("err unknown command\n")
                    fh.flush()
                except (OSError, PhaseBridgeError):
                    break
