"""Request/response models for the HTTP service."""
from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    version: str


class StartSessionRequest(BaseModel):
    """Start a live real-time session with an embedded controller."""

    config: dict[str, Any] | None = Field(
        default=None, description="inline config object (same shape as a config file)"
    )
    config_path: str | None = Field(
        default=None, description="path to a config file readable by the service"
    )
    fault: Literal["none", "silent", "reject"] = "none"
    log_dir: str | None = Field(
        default=None, description="directory for events.jsonl / controller.jsonl"
    )


class SessionInfo(BaseModel):
    active: bool
    mode: str | None = None
    timeout_cause: str | None = None
    current_pair: list[int] | None = None
    signal: dict[str, Any] | None = None
    controller: dict[str, Any] | None = None


class ActionRequest(BaseModel):
    kind: Literal["selection", "switch", "duration"]
    pair: list[int] | None = Field(default=None, min_length=2, max_length=2)
    switch_bit: int | None = Field(default=None, ge=0, le=1)
    fraction: float | None = None


class SubmitResponse(BaseModel):
    status: str
    cmd: int
    pair: list[int] | None = None
    hold_seconds: float | None = None
    reason: str | None = None


class RecoverResponse(BaseModel):
    ok: bool
    mode: str
    observed_greens: list[int] | None = None
    reason: str | None = None


class FaultRequest(BaseModel):
    mode: Literal["none", "silent", "reject"]


class EventsResponse(BaseModel):
    total: int
    events: list[dict[str, Any]]


class RunRequest(BaseModel):
    config: dict[str, Any] | None = None
    config_path: str | None = None
    agent: Literal["selection", "switch", "duration", "fixed"] = "fixed"
    duration: float | None = None
    clock: Literal["real", "virtual"] | None = None
    seed: int | None = None
    fault: Literal["none", "silent", "reject"] = "none"


class RunStatusResponse(BaseModel):
    run_id: str
    state: Literal["pending", "running", "done", "error"]
    exit_code: int | None = None
    metrics: dict[str, Any] | None = None
    error: str | None = None
    out_dir: str | None = None


class ReportRequest(BaseModel):
    events_path: str


class LatencyRow(BaseModel):
    action: str
    n: int
    mean_ms: float
    std_ms: float


class ReportResponse(BaseModel):
    latency: list[LatencyRow]
    undispatched_commands: int
    skipped_lines: int
    hold_durations: list[float]
    event_counts: dict[str, int]
