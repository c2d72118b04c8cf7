"""Post-run analysis of middleware event logs.

Internal latency is the time from an action leaving the agent (ACTION_OUT)
to its phase command leaving the middleware (DISPATCHED) — conversion plus
bookkeeping, excluding everything on the wire.  Statistics are reported per
action type in milliseconds.
"""
from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path

from .events import EventKind, EventRecord

ACTION_ROWS = ("selection", "switch", "duration")


@dataclass(frozen=True)
class LatencyStats:
    action: str
    n: int
    mean_ms: float
    std_ms: float


def internal_latency_samples(
    records: list[EventRecord],
) -> tuple[dict[str, list[float]], int]:
    """Per-action-type latency samples (ms) and the count of commands that
    never dispatched (dropped, rejected, or submitted during TIMEOUT)."""
    action_out: dict[int, EventRecord] = {}
    samples: dict[str, list[float]] = {a: [] for a in ACTION_ROWS}
    for rec in records:
        cmd = rec.detail.get("cmd")
        if rec.kind is EventKind.ACTION_OUT:
            action_out[cmd] = rec
        elif rec.kind is EventKind.DISPATCHED and cmd in action_out:
            out = action_out.pop(cmd)
            kind = out.detail.get("kind", "unknown")
            samples.setdefault(kind, []).append((rec.t - out.t) * 1000.0)
    return samples, len(action_out)


def latency_stats(records: list[EventRecord]) -> tuple[list[LatencyStats], int]:
    samples, unmatched = internal_latency_samples(records)
    rows: list[LatencyStats] = []
    for action in ACTION_ROWS:
        xs = samples.get(action, [])
        if xs:
            rows.append(
                LatencyStats(
                    action=action,
                    n=len(xs),
                    mean_ms=statistics.mean(xs),
                    std_ms=statistics.pstdev(xs),
                )
            )
        else:
            rows.append(LatencyStats(action=action, n=0, mean_ms=0.0, std_ms=0.0))
    return rows, unmatched


def format_latency_table(rows: list[LatencyStats]) -> str:
    """Fixed-width table, one row per action type, stats to 4 decimals."""
    header = f"{'command type':<18} {'N':>6} {'mean (ms)':>12} {'std (ms)':>12}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{'phase_' + row.action:<18} {row.n:>6} "
            f"{row.mean_ms:>12.4f} {row.std_ms:>12.4f}"
        )
    return "\n".join(lines)


def hold_durations(records: list[EventRecord]) -> list[tuple[int, float]]:
    """(cmd, seconds) from dispatch to hold release, per completed command."""
    dispatched: dict[int, float] = {}
    out: list[tuple[int, float]] = []
    for rec in records:
        cmd = rec.detail.get("cmd")
        if rec.kind is EventKind.DISPATCHED:
            dispatched[cmd] = rec.t
        elif rec.kind is EventKind.HOLD_RELEASED and cmd in dispatched:
            out.append((cmd, rec.t - dispatched.pop(cmd)))
    return out


def command_trajectories(records: list[EventRecord]) -> list[dict]:
    """Per-command event timelines, offsets in ms from ACTION_OUT."""
    order: list[int] = []
    by_cmd: dict[int, dict] = {}
    for rec in records:
        cmd = rec.detail.get("cmd")
        if cmd is None:
            continue
        if rec.kind is EventKind.ACTION_OUT:
            order.append(cmd)
            by_cmd[cmd] = {
                "cmd": cmd,
                "action": rec.detail.get("kind"),
                "t0": rec.t,
                "events": [],
            }
        entry = by_cmd.get(cmd)
        if entry is not None:
            entry["events"].append(
                {
                    "kind": rec.kind.value,
                    "t": rec.t,
                    "offset_ms": (rec.t - entry["t0"]) * 1000.0,
                }
            )
    return [by_cmd[c] for c in order]


def kind_counts(records: list[EventRecord]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for rec in records:
        counts[rec.kind.value] = counts.get(rec.kind.value, 0) + 1
    return dict(sorted(counts.items()))


def write_trajectories(path: str | Path, records: list[EventRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(command_trajectories(records), fh, indent=2, sort_keys=True)
        fh.write("\n")


def render_report(records: list[EventRecord], skipped_lines: int = 0) -> str:
    """Human-readable run report: latency table, holds, event counts."""
    rows, unmatched = latency_stats(records)
    holds = [h for _, h in hold_durations(records)]
    lines = [format_latency_table(rows)]
    if unmatched:
        lines.append(f"commands without dispatch (dropped/rejected): {unmatched}")
    if skipped_lines:
        lines.append(f"unparseable log lines skipped: {skipped_lines}")
    if holds:
        lines.append(
            f"hold durations: n={len(holds)} min={min(holds):.3f}s "
            f"max={max(holds):.3f}s mean={statistics.mean(holds):.3f}s"
        )
    counts = kind_counts(records)
    if counts:
        lines.append("event counts: " + json.dumps(counts))
    return "\n".join(lines)
