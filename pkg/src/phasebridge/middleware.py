"""Phase-command middleware: the bridge between agents and the controller.

The manager accepts one control action at a time, reduces it to a unified
phase command, dispatches it over the wire, and then *watches the signal
heads* — a command is complete only when the polled display shows exactly
the target pair in green — before releasing the hold and accepting the next
action.  Commands submitted while a hold is active are dropped, never
queued: a stale decision is worse than no decision.

A background poller keeps a cache of the latest signal state.  The cache
has a single writer (the poller; recovery also writes, but only while the
poller is halted) and is swapped atomically, so readers always see an
internally consistent snapshot and never touch the wire themselves.

Failure handling is deliberately one-way: consecutive poll timeouts, an
overdue transition, or sustained simulation drift each latch the manager
into TIMEOUT, where polling and phase commands halt.  Only an explicit
``recover()`` — which re-reads the controller and resyncs the tracked pair
from the observed greens — returns it to IDLE.
"""
from __future__ import annotations

import itertools
import logging
import threading
import time
from dataclasses import dataclass, replace
from enum import Enum
from math import floor

from . import wire
from .clocks import PRIO_POLLER, PRIO_VERIFY, VirtualLoop
from .errors import (
    ConfigError,
    ConflictError,
    SequenceError,
    StateError,
    TransportSendError,
)
from .events import EventKind, EventLog
from .model import (
    Action,
    Color,
    PhasePair,
    RingBarrierConfig,
    UnifiedCommand,
    convert_action,
)
from .wire import MsgType, ObjectId, SignalState, assemble_signal_state

log = logging.getLogger(__name__)


class ManagerMode(Enum):
    IDLE = "idle"
    ON_HOLD = "on_hold"
    TIMEOUT = "timeout"


class TimeoutCause(Enum):
    COMM_FAILURE = "comm_failure"
    TRANSITION_TIMEOUT = "transition_timeout"
    SIM_DRIFT = "sim_drift"


class SubmitStatus(Enum):
    ACCEPTED = "accepted"
    DROPPED = "dropped"
    CONFLICT_REJECTED = "conflict_rejected"
    IN_TIMEOUT = "in_timeout"


@dataclass(frozen=True)
class SubmitResult:
    status: SubmitStatus
    cmd: int
    command: UnifiedCommand | None = None
    reason: str | None = None


@dataclass(frozen=True)
class RecoverResult:
    ok: bool
    mode: ManagerMode
    observed_greens: tuple[int, ...] | None = None
    reason: str | None = None


@dataclass(frozen=True)
class MiddlewareConfig:
    """Tunables for polling, verification and failure detection (seconds)."""

    poll_hz: float = 10.0
    udp_timeout: float = 1.0
    transition_timeout: float = 10.0
    n_timeout: int = 5
    n_drift: int = 5
    verify_interval: float = 0.1
    # Accepted for config compatibility; nothing consumes it yet.
    lock_window: float = 5.0

    def __post_init__(self) -> None:
        if self.poll_hz <= 0 or self.udp_timeout <= 0 or self.verify_interval <= 0:
            raise ConfigError("poll_hz, udp_timeout and verify_interval must be > 0")
        if self.transition_timeout <= 0:
            raise ConfigError("transition_timeout must be > 0")
        if self.n_timeout < 1 or self.n_drift < 1:
            raise ConfigError("n_timeout and n_drift must be >= 1")

    @property
    def poll_period(self) -> float:
        return 1.0 / self.poll_hz


class SignalCache:
    """Latest polled signal state; immutable snapshots, atomic swap."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._snap: SignalState | None = None
        self._seq = 0

    def publish(self, state: SignalState) -> SignalState:
        with self._lock:
            self._seq += 1
            snap = replace(state, poll_seq=self._seq)
            self._snap = snap
            return snap

    def read(self) -> SignalState | None:
        with self._lock:
            return self._snap


def _next_grid(now: float, interval: float) -> float:
    """Smallest multiple of ``interval`` strictly greater than ``now``.

    Multiplication can land exactly on ``now`` when the division rounded
    down (e.g. 4.3 with interval 0.1), so step forward until the result is
    strictly in the future.
    """
    k = floor(now / interval) + 1
    t = k * interval
    while t <= now:
        k += 1
        t = k * interval
    return t


@dataclass
class _VerifyTask:
    """Book-keeping for the verification of one dispatched command."""

    cmd: int
    pair: PhasePair
    targets: frozenset[int]
    hold_seconds: float | None
    dispatch_t: float
    next_at: float
    matched: bool = False
    deadline: float | None = None


class PhaseManager:
    """Single-command phase control with display verification.

    Pass a :class:`VirtualLoop` to run cooperatively on a virtual clock;
    without one, the poller and each command's verification run on real
    threads against the wall clock.
    """

    def __init__(
        self,
        cfg: RingBarrierConfig,
        mcfg: MiddlewareConfig,
        transport,
        clock,
        events: EventLog,
        loop: VirtualLoop | None = None,
    ) -> None:
        self.cfg = cfg
        self.mcfg = mcfg
        self.transport = transport
        self.clock = clock
        self.events = events
        self.loop = loop
        self.cache = SignalCache()
        self.mode = ManagerMode.IDLE
        self.timeout_cause: TimeoutCause | None = None
        self.current_pair: PhasePair = cfg.sequence[0]
        self._lock = threading.RLock()
        self._cmd_counter = itertools.count(1)
        self._verify_task: _VerifyTask | None = None
        self._consec_poll_failures = 0
        self._consec_drifts = 0
        self._stopping = False
        self._poll_thread: threading.Thread | None = None
        self._verify_thread: threading.Thread | None = None

    # ------------------------------------------------------------------
    # Lifecycle
    # ------------------------------------------------------------------

    def start(self) -> None:
        if self.loop is not None:
            self.loop.call_at(self.clock.now(), PRIO_POLLER, self._poll_tick_virtual)
        else:
            self._poll_thread = threading.Thread(
                target=self._poll_thread_main, name="mw-poller", daemon=True
            )
            self._poll_thread.start()

    def stop(self) -> None:
        self._stopping = True
        self.transport.close()
        for t in (self._poll_thread, self._verify_thread):
            if t is not None and t.is_alive():
                t.join(timeout=2.0)

    # ------------------------------------------------------------------
    # Action submission
    # ------------------------------------------------------------------

    def submit_action(self, action: Action) -> SubmitResult:
        """Convert, dispatch and begin verifying one action.

        Returns immediately after the SET exchange; the transition itself
        completes (or times out) asynchronously under verification.
        """
        action.validate()
        cmd = next(self._cmd_counter)
        self.events.emit(EventKind.ACTION_OUT, cmd=cmd, **action.describe())
        try:
            command = convert_action(self.cfg, action, self.current_pair)
        except (ConflictError, SequenceError) as exc:
            # SequenceError: the current pair sits outside the service
            # sequence (a prior SELECTION put it there), so "advance" has no
            # defined target.  Refusing at conversion keeps the manager up.
            self.events.emit(EventKind.CONFLICT_REJECTED, cmd=cmd, reason=str(exc))
            return SubmitResult(SubmitStatus.CONFLICT_REJECTED, cmd, reason=str(exc))

        with self._lock:
            if self.mode is ManagerMode.TIMEOUT:
                self.events.emit(EventKind.DROPPED, cmd=cmd, reason="manager_in_timeout")
                return SubmitResult(
                    SubmitStatus.IN_TIMEOUT, cmd, reason="manager is in TIMEOUT"
                )
            if self.mode is ManagerMode.ON_HOLD:
                self.events.emit(EventKind.DROPPED, cmd=cmd, reason="on_hold")
                return SubmitResult(
                    SubmitStatus.DROPPED, cmd, reason="previous command still held"
                )
            self.events.emit(
                EventKind.CONVERTED,
                cmd=cmd,
                pair=command.pair.to_list(),
                hold_seconds=command.hold_seconds,
            )
            self.mode = ManagerMode.ON_HOLD
            rec = self.events.emit(
                EventKind.DISPATCHED, cmd=cmd, pair=command.pair.to_list()
            )
            task = _VerifyTask(
                cmd=cmd,
                pair=command.pair,
                targets=frozenset(command.pair.phases),
                hold_seconds=command.hold_seconds,
                dispatch_t=rec.t,
                next_at=_next_grid(rec.t, self.mcfg.verify_interval),
            )
            self._verify_task = task

        mask = wire.pair_to_mask(command.pair)
        try:
            resp = self.transport.exchange(MsgType.SET, ObjectId.VEH_CALL, bytes([mask]))
        except TransportSendError as exc:
            log.error("SET send failed: %s", exc)
            self._set_timeout(TimeoutCause.COMM_FAILURE, cmd=cmd)
            return SubmitResult(SubmitStatus.ACCEPTED, cmd, command)
        if resp is not None and resp.msg_type is MsgType.SET_RESPONSE:
            self.events.emit(
                EventKind.SET_ACKED,
                cmd=cmd,
                rtt_ms=(self.clock.now() - task.dispatch_t) * 1000.0,
            )
        elif resp is not None and resp.msg_type is MsgType.ERROR:
            # The controller refused a call the model says is admissible;
            # verification will surface it as a transition timeout.
            log.warning(
                "controller rejected call %s (code %s)",
                command.pair.to_list(),
                resp.payload.hex() or "?",
            )
        self._start_verification(task)
        return SubmitResult(SubmitStatus.ACCEPTED, cmd, command)

    # ------------------------------------------------------------------
    # Verification
    # ------------------------------------------------------------------

    def _start_verification(self, task: _VerifyTask) -> None:
        with self._lock:
            if self._verify_task is not task:  # timed out during the SET exchange
                return
        if self.loop is not None:
            self._schedule_verify(task)
        else:
            self._verify_thread = threading.Thread(
                target=self._verify_thread_main,
                args=(task,),
                name=f"mw-verify-{task.cmd}",
                daemon=True,
            )
            self._verify_thread.start()

    def _schedule_verify(self, task: _VerifyTask) -> None:
        assert self.loop is not None

        def tick() -> None:
            if self._verify_step(task, self.clock.now()):
                self._schedule_verify(task)

        self.loop.call_at(task.next_at, PRIO_VERIFY, tick)

    def _verify_thread_main(self, task: _VerifyTask) -> None:
        while not self._stopping:
            wait = task.next_at - self.clock.now()
            if wait > 0:
                time.sleep(min(wait, 0.05))
                continue
            if not self._verify_step(task, self.clock.now()):
                return

    def _verify_step(self, task: _VerifyTask, now: float) -> bool:
        """One verification check.  Returns True while the task stays live."""
        with self._lock:
            if self.mode is not ManagerMode.ON_HOLD or self._verify_task is not task:
                return False
        if task.matched:
            # Holding a confirmed green until the duration deadline.
            if task.deadline is not None and now >= task.deadline - 1e-9:
                self._release(task, now)
                return False
            task.next_at = task.deadline if task.deadline is not None else now
            return True

        snap = self.cache.read()
        ok = snap is not None and self._matches(snap, task.targets)
        self.events.emit(
            EventKind.VERIFY_POLL,
            cmd=task.cmd,
            matched=ok,
            poll_seq=None if snap is None else snap.poll_seq,
        )
        if ok:
            assert snap is not None
            self.events.emit(
                EventKind.VERIFY_MATCH,
                cmd=task.cmd,
                poll_seq=snap.poll_seq,
                green_at=snap.polled_at,
            )
            if task.hold_seconds is None:
                self._release(task, now)
                return False
            # Anchor the hold at the snapshot's poll time — the first moment
            # the target pair was actually observed green.
            task.matched = True
            task.deadline = snap.polled_at + task.hold_seconds
            task.next_at = max(task.deadline, now)
            return True
        if now - task.dispatch_t >= self.mcfg.transition_timeout - 1e-9:
            self._set_timeout(TimeoutCause.TRANSITION_TIMEOUT, cmd=task.cmd)
            return False
        task.next_at = _next_grid(now, self.mcfg.verify_interval)
        return True

    def _matches(self, snap: SignalState, targets: frozenset[int]) -> bool:
        for p, c in snap.colors.items():
            want = Color.GREEN if p in targets else Color.RED
            if c is not want:
                return False
        return all(p in snap.colors for p in targets)

    def _release(self, task: _VerifyTask, now: float) -> None:
        with self._lock:
            # A failure may have latched TIMEOUT since this check began;
            # releasing would then bypass the manual-recovery requirement.
            if self.mode is not ManagerMode.ON_HOLD or self._verify_task is not task:
                return
            self._verify_task = None
            self.mode = ManagerMode.IDLE
            self.current_pair = task.pair
        self.events.emit(
            EventKind.HOLD_RELEASED,
            cmd=task.cmd,
            pair=task.pair.to_list(),
            held_s=now - task.dispatch_t,
        )

    # ------------------------------------------------------------------
    # Polling
    # ------------------------------------------------------------------

    def _poll_tick_virtual(self) -> None:
        if self._stopping:
            return
        self._poll_cycle()
        assert self.loop is not None
        self.loop.call_at(
            _next_grid(self.clock.now(), self.mcfg.poll_period),
            PRIO_POLLER,
            self._poll_tick_virtual,
        )

    def _poll_thread_main(self) -> None:
        next_at = self.clock.now()
        while not self._stopping:
            wait = next_at - self.clock.now()
            if wait > 0:
                time.sleep(min(wait, 0.05))
                continue
            self._poll_cycle()
            next_at = _next_grid(self.clock.now(), self.mcfg.poll_period)

    def _poll_cycle(self) -> None:
        # While latched in TIMEOUT all wire traffic stays halted.
        if self.mode is ManagerMode.TIMEOUT:
            return
        masks = self._read_status_masks()
        if masks is None:
            with self._lock:
                self._consec_poll_failures += 1
                n = self._consec_poll_failures
            self.events.emit(EventKind.POLL_TIMEOUT, consecutive=n)
            if n >= self.mcfg.n_timeout:
                self._set_timeout(TimeoutCause.COMM_FAILURE)
            return
        state = assemble_signal_state(
            *masks, at=self.clock.now(), phases=self.cfg.phases
        )
        snap = self.cache.publish(state)
        with self._lock:
            self._consec_poll_failures = 0
        self.events.emit(
            EventKind.POLL_OK,
            poll_seq=snap.poll_seq,
            greens=sorted(snap.phases_in(Color.GREEN)),
            yellows=sorted(snap.phases_in(Color.YELLOW)),
        )

    def _read_status_masks(self) -> tuple[int, int, int] | None:
        values: list[int] = []
        for obj in wire.STATUS_OBJECTS:
            try:
                resp = self.transport.exchange(MsgType.GET, obj)
            except TransportSendError:
                return None
            if (
                resp is None
                or resp.msg_type is not MsgType.GET_RESPONSE
                or resp.object_id != obj
                or len(resp.payload) != 1
            ):
                return None
            values.append(resp.payload[0])
        return values[0], values[1], values[2]

    # ------------------------------------------------------------------
    # Failure latch, recovery, drift
    # ------------------------------------------------------------------

    def _set_timeout(self, cause: TimeoutCause, **extra) -> None:
        with self._lock:
            if self.mode is ManagerMode.TIMEOUT:
                return
            self.mode = ManagerMode.TIMEOUT
            self.timeout_cause = cause
            self._verify_task = None
        self.events.emit(EventKind.TIMEOUT_SET, cause=cause.value, **extra)

    def recover(self) -> RecoverResult:
        """Manual exit from TIMEOUT: re-read the controller and resync.

        Raises :class:`StateError` unless the manager is in TIMEOUT.  Fails
        (and stays latched) when the controller is still unreachable or its
        display does not show a clean one-pair green to resync to.
        """
        with self._lock:
            if self.mode is not ManagerMode.TIMEOUT:
                raise StateError("recover() requires TIMEOUT mode")
        masks = self._read_status_masks()
        if masks is None:
            return RecoverResult(
                False, ManagerMode.TIMEOUT, reason="controller unreachable"
            )
        state = assemble_signal_state(
            *masks, at=self.clock.now(), phases=self.cfg.phases
        )
        snap = self.cache.publish(state)
        greens = sorted(snap.phases_in(Color.GREEN))
        by_ring = {1: [], 2: []}
        for p in greens:
            by_ring[self.cfg.ring_of[p]].append(p)
        if len(by_ring[1]) != 1 or len(by_ring[2]) != 1:
            return RecoverResult(
                False,
                ManagerMode.TIMEOUT,
                observed_greens=tuple(greens),
                reason=f"display {greens} is not a single served pair",
            )
        pair = PhasePair(by_ring[1][0], by_ring[2][0])
        with self._lock:
            self.mode = ManagerMode.IDLE
            self.timeout_cause = None
            self.current_pair = pair
            self._consec_poll_failures = 0
            self._consec_drifts = 0
        self.events.emit(EventKind.RECOVERED, greens=greens, pair=pair.to_list())
        return RecoverResult(True, ManagerMode.IDLE, observed_greens=tuple(greens))

    def report_step_duration(self, elapsed: float, step_length: float) -> bool:
        """Account one simulation step's computation time.

        Returns True when the step overran ``step_length``.  Enough
        consecutive overruns latch TIMEOUT with cause SIM_DRIFT.
        """
        if self.mode is ManagerMode.TIMEOUT:
            return False
        if elapsed > step_length:
            with self._lock:
                self._consec_drifts += 1
                n = self._consec_drifts
            self.events.emit(
                EventKind.DRIFT,
                elapsed=elapsed,
                step_length=step_length,
                consecutive=n,
            )
            if n >= self.mcfg.n_drift:
                self._set_timeout(TimeoutCause.SIM_DRIFT)
            return True
        with self._lock:
            self._consec_drifts = 0
        return False

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    def signal_state(self) -> SignalState | None:
        return self.cache.read()

    def snapshot(self) -> dict:
        snap = self.cache.read()
        return {
            "mode": self.mode.value,
            "timeout_cause": None if self.timeout_cause is None else self.timeout_cause.value,
            "current_pair": self.current_pair.to_list(),
            "signal": None if snap is None else snap.to_dict(),
        }
