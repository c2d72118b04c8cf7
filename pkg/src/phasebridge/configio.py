"""JSON configuration loading.

A config file has up to three sections — ``signal`` (required),
``middleware`` and ``scenario`` (optional, defaulted) — see
``data/standard8.json`` for the reference layout.  The compatibility matrix
is a flat row-major 0/1 array of length N*N over the phase list's order;
per-phase timing accepts a ``default`` entry plus per-phase overrides.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .middleware import MiddlewareConfig
from .model import PhasePair, PhaseTiming, RingBarrierConfig
from .sim import ClockMode, ScenarioConfig

BUNDLED_STANDARD8 = "standard8.json"

_TIMING_KEYS = ("min_green", "max_green", "yellow", "red_clearance")


@dataclass(frozen=True)
class AppConfig:
    signal: RingBarrierConfig
    middleware: MiddlewareConfig
    scenario: ScenarioConfig


def load_app_config(path: str | Path | None = None) -> AppConfig:
    """Load a config file; with no path, the bundled eight-phase standard."""
    if path is None:
        text = (
            resources.files("phasebridge.data")
            .joinpath(BUNDLED_STANDARD8)
            .read_text(encoding="utf-8")
        )
        source = f"<bundled {BUNDLED_STANDARD8}>"
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        source = str(path)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object")
    return parse_app_config(raw, source=source)


def parse_app_config(raw: dict, source: str = "<dict>") -> AppConfig:
    unknown = set(raw) - {"signal", "middleware", "scenario"}
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {sorted(unknown)}")
    if "signal" not in raw:
        raise ConfigError(f"{source}: missing required 'signal' section")
    return AppConfig(
        signal=parse_signal_config(raw["signal"]),
        middleware=parse_middleware_config(raw.get("middleware", {})),
        scenario=parse_scenario_config(raw.get("scenario", {})),
    )


def parse_signal_config(sig: dict) -> RingBarrierConfig:
    for key in ("phases", "rings", "barriers", "compat", "sequence"):
        if key not in sig:
            raise ConfigError(f"signal section missing '{key}'")
    phases = tuple(int(p) for p in sig["phases"])
    ring_of = _membership(sig["rings"], phases, "rings")
    barrier_of = _membership(sig["barriers"], phases, "barriers")

    flat = sig["compat"]
    n = len(phases)
    if not isinstance(flat, list) or len(flat) != n * n:
        raise ConfigError(
            f"compat must be a flat row-major array of {n * n} entries"
        )
    if any(v not in (0, 1) for v in flat):
        raise ConfigError("compat entries must be 0 or 1")
    compat = tuple(
        tuple(bool(flat[i * n + j]) for j in range(n)) for i in range(n)
    )

    timing_raw = sig.get("timing", {})
    default = _timing_from(timing_raw.get("default", {}), "timing.default")
    timing: dict[int, PhaseTiming] = {}
    for p in phases:
        override = timing_raw.get(str(p), None)
        timing[p] = (
            default if override is None else _timing_from(override, f"timing.{p}")
        )

    sequence = []
    for entry in sig["sequence"]:
        if not isinstance(entry, list) or len(entry) != 2:
            raise ConfigError(f"sequence entries must be [ring1, ring2] pairs: {entry}")
        sequence.append(PhasePair(int(entry[0]), int(entry[1])))

    return RingBarrierConfig(
        phases=phases,
        ring_of=ring_of,
        barrier_of=barrier_of,
        compat=compat,
        timing=timing,
        sequence=tuple(sequence),
    )


def parse_middleware_config(mw: dict) -> MiddlewareConfig:
    allowed = {
        "poll_hz",
        "udp_timeout",
        "transition_timeout",
        "n_timeout",
        "n_drift",
        "verify_interval",
        "lock_window",
    }
    unknown = set(mw) - allowed
    if unknown:
        raise ConfigError(f"middleware section: unknown key(s) {sorted(unknown)}")
    return MiddlewareConfig(**mw)


def parse_scenario_config(sc: dict) -> ScenarioConfig:
    allowed = {
        "step_length",
        "control_interval",
        "duration",
        "clock",
        "seed",
        "arrival_rates",
        "default_arrival_rate",
        "saturation_rate",
    }
    unknown = set(sc) - allowed
    if unknown:
        raise ConfigError(f"scenario section: unknown key(s) {sorted(unknown)}")
    kwargs = dict(sc)
    if "clock" in kwargs:
        try:
            kwargs["clock_mode"] = ClockMode(kwargs.pop("clock"))
        except ValueError as exc:
            raise ConfigError(f"scenario.clock: {exc}") from exc
    if "arrival_rates" in kwargs:
        try:
            kwargs["arrival_rates"] = {
                int(p): float(r) for p, r in kwargs["arrival_rates"].items()
            }
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario.arrival_rates: {exc}") from exc
    return ScenarioConfig(**kwargs)


# ---------------------------------------------------------------------------


def _membership(groups: dict, phases: tuple[int, ...], what: str) -> dict[int, int]:
    """Invert {"1": [phases...]} group lists into a per-phase map."""
    of: dict[int, int] = {}
    for gid, members in groups.items():
        for p in members:
            p = int(p)
            if p in of:
                raise ConfigError(f"{what}: phase {p} listed in more than one group")
            of[p] = int(gid)
    missing = [p for p in phases if p not in of]
    if missing:
        raise ConfigError(f"{what}: phases {missing} not assigned to any group")
    extra = [p for p in of if p not in phases]
    if extra:
        raise ConfigError(f"{what}: unknown phase(s) {sorted(extra)}")
    return of


def _timing_from(d: dict, where: str) -> PhaseTiming:
    unknown = set(d) - set(_TIMING_KEYS)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")
    return PhaseTiming(**{k: float(v) for k, v in d.items()})
