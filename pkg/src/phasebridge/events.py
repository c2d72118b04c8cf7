"""Structured event log: the audit trail every measurement is derived from.

One record per line of JSON; each line is flushed as it is written so a
crashed run still leaves a usable trace.  Timestamps come from the clock the
writer was built with and are non-decreasing.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterable


class EventKind(Enum):
    ACTION_OUT = "ACTION_OUT"
    CONVERTED = "CONVERTED"
    DISPATCHED = "DISPATCHED"
    SET_ACKED = "SET_ACKED"
    VERIFY_POLL = "VERIFY_POLL"
    VERIFY_MATCH = "VERIFY_MATCH"
    HOLD_RELEASED = "HOLD_RELEASED"
    DROPPED = "DROPPED"
    CONFLICT_REJECTED = "CONFLICT_REJECTED"
    TIMEOUT_SET = "TIMEOUT_SET"
    RECOVERED = "RECOVERED"
    POLL_OK = "POLL_OK"
    POLL_TIMEOUT = "POLL_TIMEOUT"
    DRIFT = "DRIFT"


@dataclass(frozen=True)
class EventRecord:
    t: float
    kind: EventKind
    detail: dict

    def to_json_line(self) -> str:
        return json.dumps(
            {"t": self.t, "kind": self.kind.value, "detail": self.detail},
            sort_keys=True,
        )


class EventLog:
    """Thread-safe recorder; keeps records in memory and optionally on disk."""

    def __init__(self, clock, path: str | Path | None = None) -> None:
        self._clock = clock
        self._lock = threading.Lock()
        self._records: list[EventRecord] = []
        self._fh: IO[str] | None = None
        if path is not None:
            self._fh = open(path, "w", encoding="utf-8")

    def emit(self, kind: EventKind, /, **detail) -> EventRecord:
        rec = EventRecord(t=self._clock.now(), kind=kind, detail=detail)
        with self._lock:
            self._records.append(rec)
            if self._fh is not None:
                self._fh.write(rec.to_json_line() + "\n")
                self._fh.flush()
        return rec

    def records(self) -> list[EventRecord]:
        with self._lock:
            return list(self._records)

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self) -> "EventLog":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def parse_event_lines(lines: Iterable[str]) -> tuple[list[EventRecord], int]:
    """Parse a line-delimited event stream.

    Returns the well-formed records plus a count of lines that were skipped
    because they could not be parsed (truncated writes, stray output).
    """
    records: list[EventRecord] = []
    skipped = 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            records.append(
                EventRecord(
                    t=float(obj["t"]),
                    kind=EventKind(obj["kind"]),
                    detail=dict(obj.get("detail", {})),
                )
            )
        except (ValueError, KeyError, TypeError):
            skipped += 1
    return records, skipped


def read_event_log(path: str | Path) -> tuple[list[EventRecord], int]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_event_lines(fh)
