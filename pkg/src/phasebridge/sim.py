"""Closed-loop traffic harness: fluid queues, control agents, run loop.

The traffic model is deliberately small — one non-negative real queue per
phase, random arrivals, saturation-limited departures while the phase is
green — because its job is to exercise the control path with plausible,
*reproducible* load, not to predict traffic.  All randomness comes from
per-phase generators seeded from the scenario seed, so two runs with the
same scenario produce identical arrivals regardless of clock mode.

Agents never see signal colors; they decide from queue state alone and
learn the outcome the same way any external controller client would — by
the middleware accepting, dropping, or timing out their next command.
"""
from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Mapping

from .clocks import VirtualLoop
from .errors import ConfigError
from .middleware import ManagerMode, PhaseManager, SubmitStatus
from .model import (
    Action,
    Color,
    PhasePair,
    RingBarrierConfig,
    enumerate_admissible_pairs,
    next_pair,
)

log = logging.getLogger(__name__)

# Queue length mapped to a full-length green by the duration agent.
QUEUE_NORM = 20.0


class ClockMode(Enum):
    REAL_TIME = "real_time"
    VIRTUAL = "virtual"


@dataclass(frozen=True)
class ScenarioConfig:
    """Traffic scenario and run-control parameters (seconds, veh/s)."""

    step_length: float = 0.25
    control_interval: float = 10.0
    duration: float = 120.0
    clock_mode: ClockMode = ClockMode.VIRTUAL
    seed: int = 1
    arrival_rates: Mapping[int, float] = field(default_factory=dict)
    default_arrival_rate: float = 0.05
    saturation_rate: float = 0.5

    def __post_init__(self) -> None:
        if self.step_length <= 0:
            raise ConfigError("step_length must be > 0")
        if self.duration < 0:
            raise ConfigError("duration must be >= 0")
        k = round(self.control_interval / self.step_length)
        if k < 1 or abs(k * self.step_length - self.control_interval) > 1e-6:
            raise ConfigError(
                "control_interval must be a positive multiple of step_length"
            )
        if self.saturation_rate < 0 or self.default_arrival_rate < 0:
            raise ConfigError("rates must be >= 0")
        if any(r < 0 for r in self.arrival_rates.values()):
            raise ConfigError("arrival rates must be >= 0")

    @property
    def steps_total(self) -> int:
        return round(self.duration / self.step_length)

    @property
    def steps_per_control(self) -> int:
        return round(self.control_interval / self.step_length)

    def rate_of(self, phase: int) -> float:
        return self.arrival_rates.get(phase, self.default_arrival_rate)


class TrafficModel:
    """Per-phase fluid queues with seeded random arrivals."""

    def __init__(self, scenario: ScenarioConfig, phases: tuple[int, ...]) -> None:
        self.scenario = scenario
        self.phases = phases
        self.queues: dict[int, float] = {p: 0.0 for p in phases}
        self.cum_arrivals = 0.0
        self.cum_departures = 0.0
        self.steps = 0
        # Independent stream per phase so adding a phase never perturbs the
        # arrival pattern of the others.
        self._rng = {
            p: random.Random(scenario.seed * 1_000_003 + p) for p in phases
        }

    @property
    def sim_time(self) -> float:
        return self.steps * self.scenario.step_length

    def step(self, green_phases: frozenset[int] | set[int]) -> None:
        dt = self.scenario.step_length
        for p in self.phases:
            arrived = self._rng[p].uniform(0.0, 2.0 * self.scenario.rate_of(p) * dt)
            self.queues[p] += arrived
            self.cum_arrivals += arrived
            if p in green_phases:
                served = min(self.queues[p], self.scenario.saturation_rate * dt)
                self.queues[p] -= served
                self.cum_departures += served
        self.steps += 1

    def total_queue(self) -> float:
        return sum(self.queues.values())

    def pair_queue(self, pair: PhasePair) -> float:
        return self.queues[pair.ring1] + self.queues[pair.ring2]


# ---------------------------------------------------------------------------
# Agents
# ---------------------------------------------------------------------------

AgentFn = Callable[[TrafficModel, PhasePair, RingBarrierConfig], Action]


def selection_agent(
    traffic: TrafficModel, current: PhasePair, cfg: RingBarrierConfig
) -> Action:
    """Serve the admissible pair with the longest summed queue (ties go to
    the lowest-numbered pair)."""
    pairs = sorted(enumerate_admissible_pairs(cfg))
    best = min(pairs, key=lambda pr: (-traffic.pair_queue(pr), pr))
    return Action.selection(best)


def switch_agent(
    traffic: TrafficModel, current: PhasePair, cfg: RingBarrierConfig
) -> Action:
    """Advance along the sequence only when the successor out-queues the
    current pair."""
    succ = next_pair(cfg, current)
    bit = 1 if traffic.pair_queue(succ) > traffic.pair_queue(current) else 0
    return Action.switch(bit)


def duration_agent(
    traffic: TrafficModel, current: PhasePair, cfg: RingBarrierConfig
) -> Action:
    """Green time for the next pair proportional to its queue."""
    succ = next_pair(cfg, current)
    fraction = min(1.0, max(0.0, traffic.pair_queue(succ) / QUEUE_NORM))
    return Action.duration(fraction)


def fixed_agent(
    traffic: TrafficModel, current: PhasePair, cfg: RingBarrierConfig
) -> Action:
    """Always advance: a fixed-cycle baseline that exercises a transition on
    every decision."""
    return Action.switch(1)


AGENTS: dict[str, AgentFn] = {
    "selection": selection_agent,
    "switch": switch_agent,
    "duration": duration_agent,
    "fixed": fixed_agent,
}


# ---------------------------------------------------------------------------
# Run loop
# ---------------------------------------------------------------------------


class RunLoop:
    """Drives the scenario forward step by step and talks to the manager.

    SELECTION/SWITCH-style agents (including the fixed baseline) decide on
    a fixed control interval; the DURATION agent decides whenever the
    manager is back in IDLE, since its hold time *is* the control interval.
    In VIRTUAL mode the loop owns the virtual scheduler; in REAL_TIME mode
    it paces itself against the wall clock.
    """

    def __init__(
        self,
        manager: PhaseManager,
        traffic: TrafficModel,
        scenario: ScenarioConfig,
        agent_name: str,
        clock,
        loop: VirtualLoop | None = None,
    ) -> None:
        if agent_name not in AGENTS:
            raise ConfigError(
                f"unknown agent {agent_name!r}; choose from {sorted(AGENTS)}"
            )
        self.manager = manager
        self.traffic = traffic
        self.scenario = scenario
        self.agent_name = agent_name
        self.agent = AGENTS[agent_name]
        self.clock = clock
        self.loop = loop
        self.decisions: dict[str, int] = {}
        self.submissions = {s.value: 0 for s in SubmitStatus}
        self.skipped_in_timeout = 0
        self._queue_sum = 0.0

    def run(self) -> dict:
        t0 = self.clock.now()
        total = self.scenario.steps_total
        for k in range(total):
            target = t0 + k * self.scenario.step_length
            if self.loop is not None:
                self.loop.run_until(max(target, self.clock.now()))
            else:
                self.clock.sleep_until(target)
            self._do_step(k)
        if self.loop is not None:
            # Let in-flight verification and the poller settle to end time.
            self.loop.run_until(max(t0 + self.scenario.duration, self.clock.now()))
        return self._metrics()

    # -- internals ----------------------------------------------------------

    def _do_step(self, k: int) -> None:
        if self._should_decide(k):
            self._decide()
        wall0 = time.perf_counter()
        if self.manager.mode is ManagerMode.TIMEOUT:
            # Signal-dependent dynamics pause: arrivals accrue, nothing is
            # served, because the signal state is no longer trustworthy.
            greens: set[int] = set()
        else:
            snap = self.manager.signal_state()
            greens = set() if snap is None else snap.phases_in(Color.GREEN)
        self.traffic.step(greens)
        elapsed = time.perf_counter() - wall0
        self.manager.report_step_duration(elapsed, self.scenario.step_length)
        self._queue_sum += self.traffic.total_queue()

    def _should_decide(self, k: int) -> bool:
        if self.agent_name == "duration":
            return self.manager.mode is ManagerMode.IDLE or (
                self.manager.mode is ManagerMode.TIMEOUT
                and k % self.scenario.steps_per_control == 0
            )
        return k % self.scenario.steps_per_control == 0

    def _decide(self) -> None:
        if self.manager.mode is ManagerMode.TIMEOUT:
            self.skipped_in_timeout += 1
            return
        action = self.agent(self.traffic, self.manager.current_pair, self.manager.cfg)
        self.decisions[action.kind.value] = self.decisions.get(action.kind.value, 0) + 1
        result = self.manager.submit_action(action)
        self.submissions[result.status.value] += 1

    def _metrics(self) -> dict:
        steps = max(self.traffic.steps, 1)
        return {
            "agent": self.agent_name,
            "clock": self.scenario.clock_mode.value,
            "seed": self.scenario.seed,
            "steps": self.traffic.steps,
            "sim_time": self.traffic.sim_time,
            "decisions": dict(sorted(self.decisions.items())),
            "submissions": dict(sorted(self.submissions.items())),
            "skipped_in_timeout": self.skipped_in_timeout,
            "traffic": {
                "arrivals": self.traffic.cum_arrivals,
                "departures": self.traffic.cum_departures,
                "final_queue": self.traffic.total_queue(),
                "mean_queue": self._queue_sum / steps,
            },
            "ended_in_timeout": self.manager.mode is ManagerMode.TIMEOUT,
            "timeout_cause": None
            if self.manager.timeout_cause is None
            else self.manager.timeout_cause.value,
        }
