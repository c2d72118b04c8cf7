"""Real and virtual clocks.

Real-time components read ``time.perf_counter`` and sleep.  In virtual mode
every periodic task registers callbacks on a :class:`VirtualLoop`, which
pops them in (time, priority) order and teleports the clock — a multi-minute
scenario then runs as fast as the callbacks compute.
"""
from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field

# Callback ordering for events scheduled at the same instant.  Lower runs
# first: the signal head changes before anyone polls it, polls land in the
# cache before verification reads it, and the harness acts last.
PRIO_CONTROLLER = 0
PRIO_TRANSPORT = 1
PRIO_POLLER = 2
PRIO_VERIFY = 3
PRIO_HARNESS = 4


class MonotonicClock:
    """Wall clock backed by ``perf_counter``; origin at construction."""

    virtual = False

    def __init__(self) -> None:
        self._t0 = time.perf_counter()

    def now(self) -> float:
        return time.perf_counter() - self._t0

    def sleep_until(self, t: float) -> None:
        dt = t - self.now()
        if dt > 0:
            time.sleep(dt)


class VirtualClock:
    """Simulated clock; only a :class:`VirtualLoop` moves it, never backwards."""

    virtual = True

    def __init__(self, start: float = 0.0) -> None:
        self._t = start

    def now(self) -> float:
        return self._t

    def _advance_to(self, t: float) -> None:
        if t > self._t:
            self._t = t


@dataclass(order=True)
class _Scheduled:
    when: float
    priority: int
    seq: int
    fn: object = field(compare=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


class VirtualLoop:
    """Priority-queue event loop driving a :class:`VirtualClock`.

    ``run_until`` is re-entrant: a callback that needs to block for
    simulated time (for example a transport waiting out a receive timeout)
    may call :meth:`wait`, which recursively drains every event due in the
    waiting window before control returns.
    """

    def __init__(self, clock: VirtualClock) -> None:
        self.clock = clock
        self._heap: list[_Scheduled] = []
        self._seq = itertools.count()

    def call_at(self, when: float, priority: int, fn) -> _Scheduled:
        if when < self.clock.now():
            when = self.clock.now()
        item = _Scheduled(when, priority, next(self._seq), fn)
        heapq.heappush(self._heap, item)
        return item

    def run_until(self, t_target: float) -> None:
        while self._heap and self._heap[0].when <= t_target:
            item = heapq.heappop(self._heap)
            if item.cancelled:
                continue
            self.clock._advance_to(item.when)
            item.fn()
        self.clock._advance_to(t_target)

    def wait(self, seconds: float) -> None:
        """Block the caller for ``seconds`` of simulated time."""
        self.run_until(self.clock.now() + seconds)

    def drain(self) -> None:
        """Run every remaining event regardless of its timestamp."""
        while self._heap:
            item = heapq.heappop(self._heap)
            if not item.cancelled:
                self.clock._advance_to(item.when)
                item.fn()
