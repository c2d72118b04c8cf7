"""Request/response transports used by the middleware.

Both transports expose one blocking call, ``exchange``: frame a request,
assign it a fresh request id, and wait up to the configured timeout for the
matching response.  Garbage frames and responses carrying a stale request id
are not errors — they are silently ignored and the exchange simply times
out, exactly as a lost datagram would.

``UdpTransport`` talks to a controller over a real socket.
``LoopTransport`` calls an in-process :class:`SignalControllerCore`
directly, charging simulated time to the virtual loop when the controller
does not answer, so failure timing is faithful in compressed-time runs.
"""
from __future__ import annotations

import logging
import socket
import threading
import time

from . import wire
from .clocks import VirtualLoop
from .controller import SignalControllerCore
from .errors import TransportSendError
from .wire import DecodeError, MsgType, WireMessage

log = logging.getLogger(__name__)


class UdpTransport:
    """One half-duplex request/response channel over a datagram socket.

    Exchanges are serialized: several threads (the poller plus whoever is
    submitting a command) share this socket, and two concurrent reads would
    let one thread consume — and discard as stale — the response the other
    is waiting for, starving it into a spurious timeout.  With one request
    in flight at a time, a late response left in the buffer by a timed-out
    exchange is simply skipped by the next one.
    """

    def __init__(
        self, host: str, port: int, timeout: float, max_datagram: int = 2048
    ) -> None:
        self._addr = (host, port)
        self._timeout = timeout
        self._max = max_datagram
        self._next_id = 1
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind(("0.0.0.0" if host != "127.0.0.1" else "127.0.0.1", 0))
        self._closed = False
        self._lock = threading.Lock()

    def _fresh_id(self) -> int:
        rid = self._next_id
        self._next_id = rid % 0xFFFF + 1  # wrap within u16, skipping 0
        return rid

    def exchange(
        self, msg_type: MsgType, object_id: int, payload: bytes = b""
    ) -> WireMessage | None:
        """Send one request; return the matching response or None on timeout."""
        with self._lock:
            return self._exchange_locked(msg_type, object_id, payload)

    def _exchange_locked(
        self, msg_type: MsgType, object_id: int, payload: bytes
    ) -> WireMessage | None:
        rid = self._fresh_id()
        frame = wire.encode(WireMessage(msg_type, rid, object_id, payload))
        try:
            self._sock.sendto(frame, self._addr)
        except OSError as exc:
            if self._closed:
                return None
            raise TransportSendError(f"send to {self._addr} failed: {exc}") from exc
        deadline = time.perf_counter() + self._timeout
        while True:
            remaining = deadline - time.perf_counter()
            if remaining <= 0:
                return None
            self._sock.settimeout(remaining)
            try:
                data, _ = self._sock.recvfrom(self._max)
            except socket.timeout:
                return None
            except OSError:
                # Closed under us, or ICMP port-unreachable surfacing on the
                # next read: either way there is no response to wait for.
                return None
            try:
                msg = wire.decode(data)
            except DecodeError as exc:
                log.debug("discarding undecodable frame: %s", exc)
                continue
            if msg.request_id != rid:
                log.debug("discarding stale response id=%d (want %d)", msg.request_id, rid)
                continue
            return msg

    def close(self) -> None:
        self._closed = True
        try:
            self._sock.close()
        except OSError:
            pass


class LoopTransport:
    """In-process transport for virtual-time runs.

    A reply, when the controller produces one, is instantaneous; when the
    controller is silent the full receive timeout elapses on the virtual
    clock via :meth:`VirtualLoop.wait`, which keeps every other scheduled
    task running while this caller "blocks".
    """

    def __init__(
        self,
        core: SignalControllerCore,
        clock,
        loop: VirtualLoop,
        timeout: float,
    ) -> None:
        self._core = core
        self._clock = clock
        self._loop = loop
        self._timeout = timeout
        self._next_id = 1

    def exchange(
        self, msg_type: MsgType, object_id: int, payload: bytes = b""
    ) -> WireMessage | None:
        rid = self._next_id
        self._next_id = rid % 0xFFFF + 1
        frame = wire.encode(WireMessage(msg_type, rid, object_id, payload))
        resp = self._core.handle_datagram(frame, self._clock.now())
        if resp is None:
            self._loop.wait(self._timeout)
            return None
        try:
            msg = wire.decode(resp)
        except DecodeError:  # pragma: no cover - the core never emits garbage
            self._loop.wait(self._timeout)
            return None
        if msg.request_id != rid:  # pragma: no cover - ids are echoed
            self._loop.wait(self._timeout)
            return None
        return msg

    def close(self) -> None:
        pass
