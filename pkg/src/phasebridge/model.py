"""Dual-ring signal phasing model and the control-action vocabulary.

Phases are small integers grouped into two concurrent rings, with barriers
splitting each ring into groups that must cross together.  Two phases may
show green simultaneously only if they run in *different* rings on the
*same* side of a barrier; everything else is a conflict.  On top of that
structure this module defines the three action types accepted from control
agents and their reduction to a single unified form (target pair, optional
hold time).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import ActionError, ConfigError, ConflictError, SequenceError

# ---------------------------------------------------------------------------
# Signal display colors
# ---------------------------------------------------------------------------


class Color(Enum):
    RED = "red"
    YELLOW = "yellow"
    GREEN = "green"


# ---------------------------------------------------------------------------
# Phase pairs and per-phase timing
# ---------------------------------------------------------------------------


@dataclass(frozen=True, order=True)
class PhasePair:
    """One phase from each ring, served together.

    ``ring1``/``ring2`` name the member drawn from the respective ring; the
    pair itself carries no validity claim — admissibility is checked against
    a :class:`RingBarrierConfig`.
    """

    ring1: int
    ring2: int

    @property
    def phases(self) -> tuple[int, int]:
        return (self.ring1, self.ring2)

    def __contains__(self, phase: int) -> bool:
        return phase == self.ring1 or phase == self.ring2

    def to_list(self) -> list[int]:
        return [self.ring1, self.ring2]


@dataclass(frozen=True)
class PhaseTiming:
    """Signal timing bounds for a single phase, in seconds."""

    min_green: float = 3.0
    max_green: float = 20.0
    yellow: float = 3.0
    red_clearance: float = 2.0

    def __post_init__(self) -> None:
        if self.min_green < 0 or self.yellow < 0 or self.red_clearance < 0:
            raise ConfigError("phase timing values must be non-negative")
        if self.max_green < self.min_green:
            raise ConfigError(
                f"max_green ({self.max_green}) must be >= min_green ({self.min_green})"
            )


# ---------------------------------------------------------------------------
# Ring/barrier configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RingBarrierConfig:
    """Static description of an intersection's phasing.

    ``compat`` is an N x N boolean matrix indexed by (phase-1, phase-1); a
    True entry means the two phases may display green together.  The matrix
    is validated on construction against the ring/barrier structure so that
    a hand-edited table cannot quietly disagree with it.
    """

    phases: tuple[int, ...]
    ring_of: Mapping[int, int]
    barrier_of: Mapping[int, int]
    compat: tuple[tuple[bool, ...], ...]
    timing: Mapping[int, PhaseTiming]
    sequence: tuple[PhasePair, ...]
    # Assembled on construction: phases listed per ring, in id order.
    rings: Mapping[int, tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.phases:
            raise ConfigError("configuration defines no phases")
        if len(set(self.phases)) != len(self.phases):
            raise ConfigError("duplicate phase ids")
        if sorted(self.ring_of) != sorted(self.phases) or sorted(
            self.barrier_of
        ) != sorted(self.phases):
            raise ConfigError("ring/barrier maps must cover exactly the phase set")
        rings: dict[int, list[int]] = {}
        for p in sorted(self.phases):
            rings.setdefault(self.ring_of[p], []).append(p)
        if len(rings) != 2:
            raise ConfigError("exactly two rings are required")
        object.__setattr__(
            self, "rings", {r: tuple(ps) for r, ps in sorted(rings.items())}
        )
        n = len(self.phases)
        if len(self.compat) != n or any(len(row) != n for row in self.compat):
            raise ConfigError(f"compatibility matrix must be {n}x{n}")
        for p in self.phases:
            if p not in self.timing:
                raise ConfigError(f"missing timing for phase {p}")
        # The matrix must agree with the structural rule and be a symmetric,
        # irreflexive relation.
        for i, j in itertools.product(self.phases, repeat=2):
            want = (
                i != j
                and self.ring_of[i] != self.ring_of[j]
                and self.barrier_of[i] == self.barrier_of[j]
            )
            got = self._entry(i, j)
            if got != want:
                raise ConfigError(
                    f"compatibility matrix entry ({i},{j}) is {int(got)}; "
                    f"ring/barrier structure implies {int(want)}"
                )
        if not self.sequence:
            raise ConfigError("service sequence is empty")
        seen: set[PhasePair] = set()
        for pair in self.sequence:
            if pair in seen:
                raise ConfigError(f"pair {pair.to_list()} repeats in the sequence")
            seen.add(pair)
            self._check_pair(pair)

    # -- helpers ------------------------------------------------------------

    def _entry(self, i: int, j: int) -> bool:
        return self.compat[self._index(i)][self._index(j)]

    def _index(self, phase: int) -> int:
        try:
            return self.phases.index(phase)
        except ValueError:
            raise ConfigError(f"unknown phase id {phase}") from None

    def require_phase(self, phase: int) -> None:
        if phase not in self.ring_of:
            raise ConfigError(f"unknown phase id {phase}")

    def _check_pair(self, pair: PhasePair) -> None:
        self.require_phase(pair.ring1)
        self.require_phase(pair.ring2)
        if self.ring_of[pair.ring1] != 1 or self.ring_of[pair.ring2] != 2:
            raise ConflictError(
                f"pair {pair.to_list()} must take one phase from each ring"
            )
        if not self._entry(pair.ring1, pair.ring2):
            raise ConflictError(f"phases {pair.to_list()} conflict")

    @property
    def n_phases(self) -> int:
        return len(self.phases)


# ---------------------------------------------------------------------------
# Compatibility / sequencing / duration mapping
# ---------------------------------------------------------------------------


def is_compatible(cfg: RingBarrierConfig, i: int, j: int) -> bool:
    """True iff phases ``i`` and ``j`` may display green together.

    A phase is never compatible with itself.  Unknown phase ids raise
    :class:`ConfigError`.
    """
    cfg.require_phase(i)
    cfg.require_phase(j)
    if i == j:
        return False
    return cfg._entry(i, j)


def enumerate_admissible_pairs(cfg: RingBarrierConfig) -> set[PhasePair]:
    """All ring-1/ring-2 pairs whose members are mutually compatible."""
    out: set[PhasePair] = set()
    for a in cfg.rings[1]:
        for b in cfg.rings[2]:
            if cfg._entry(a, b):
                out.add(PhasePair(a, b))
    return out


def next_pair(cfg: RingBarrierConfig, current: PhasePair) -> PhasePair:
    """Successor of ``current`` in the service sequence, wrapping at the end."""
    try:
        k = cfg.sequence.index(current)
    except ValueError:
        raise SequenceError(
            f"pair {current.to_list()} is not in the service sequence"
        ) from None
    return cfg.sequence[(k + 1) % len(cfg.sequence)]


def map_duration(fraction: float, timing: PhaseTiming) -> float:
    """Affinely map ``fraction`` in [0, 1] onto [min_green, max_green]."""
    if not 0.0 <= fraction <= 1.0:
        raise ActionError(f"duration fraction {fraction} outside [0, 1]")
    return timing.min_green + fraction * (timing.max_green - timing.min_green)


def governing_timing(cfg: RingBarrierConfig, pair: PhasePair) -> PhaseTiming:
    """Effective timing for a pair served as a unit.

    Both members must satisfy their own bounds, so the pair's usable green
    window is the intersection: the larger min_green, the smaller max_green.
    Clearance intervals take the longer of the two members.
    """
    a = cfg.timing[pair.ring1]
    b = cfg.timing[pair.ring2]
    lo = max(a.min_green, b.min_green)
    hi = min(a.max_green, b.max_green)
    if hi < lo:
        raise ConfigError(
            f"pair {pair.to_list()} has empty green window [{lo}, {hi}]"
        )
    return PhaseTiming(
        min_green=lo,
        max_green=hi,
        yellow=max(a.yellow, b.yellow),
        red_clearance=max(a.red_clearance, b.red_clearance),
    )


# ---------------------------------------------------------------------------
# Control actions
# ---------------------------------------------------------------------------


class ActionKind(Enum):
    SELECTION = "selection"
    SWITCH = "switch"
    DURATION = "duration"


@dataclass(frozen=True)
class Action:
    """One decision emitted by a control agent.

    Exactly one of the payload fields is meaningful, according to ``kind``:
    ``pair`` for SELECTION, ``switch_bit`` (0 = keep, 1 = advance) for
    SWITCH, ``fraction`` for DURATION.
    """

    kind: ActionKind
    pair: PhasePair | None = None
    switch_bit: int | None = None
    fraction: float | None = None

    @classmethod
    def selection(cls, pair: PhasePair) -> "Action":
        return cls(ActionKind.SELECTION, pair=pair)

    @classmethod
    def switch(cls, bit: int) -> "Action":
        return cls(ActionKind.SWITCH, switch_bit=bit)

    @classmethod
    def duration(cls, fraction: float) -> "Action":
        return cls(ActionKind.DURATION, fraction=fraction)

    def validate(self) -> None:
        if self.kind is ActionKind.SELECTION:
            if self.pair is None:
                raise ActionError("selection action requires a phase pair")
        elif self.kind is ActionKind.SWITCH:
            if self.switch_bit not in (0, 1):
                raise ActionError("switch action requires a 0/1 bit")
        elif self.kind is ActionKind.DURATION:
            if self.fraction is None:
                raise ActionError("duration action requires a fraction")
            if not 0.0 <= self.fraction <= 1.0:
                raise ActionError(
                    f"duration fraction {self.fraction} outside [0, 1]"
                )
        else:  # pragma: no cover - enum is closed
            raise ActionError(f"unknown action kind {self.kind}")

    def describe(self) -> dict:
        d: dict = {"kind": self.kind.value}
        if self.pair is not None:
            d["pair"] = self.pair.to_list()
        if self.switch_bit is not None:
            d["switch_bit"] = self.switch_bit
        if self.fraction is not None:
            d["fraction"] = self.fraction
        return d


@dataclass(frozen=True)
class UnifiedCommand:
    """Common form every action reduces to: the pair to serve next, plus an
    explicit green hold time for DURATION actions (None = release as soon as
    the transition is confirmed)."""

    pair: PhasePair
    hold_seconds: float | None = None


def convert_action(
    cfg: RingBarrierConfig, action: Action, current: PhasePair
) -> UnifiedCommand:
    """Reduce any action to a :class:`UnifiedCommand`.

    SELECTION names its pair outright; SWITCH keeps ``current`` (bit 0) or
    advances along the sequence (bit 1); DURATION always targets the
    successor of ``current`` and holds its green for the mapped time.
    Raises :class:`ConflictError` for inadmissible SELECTION pairs and never
    returns an incompatible pair.
    """
    action.validate()
    if action.kind is ActionKind.SELECTION:
        assert action.pair is not None
        cfg._check_pair(action.pair)
        return UnifiedCommand(pair=action.pair)
    if action.kind is ActionKind.SWITCH:
        target = current if action.switch_bit == 0 else next_pair(cfg, current)
    else:  # DURATION
        target = next_pair(cfg, current)
    cfg._check_pair(target)  # sequence pairs are load-checked; keep the belt anyway
    if action.kind is ActionKind.DURATION:
        assert action.fraction is not None
        hold = map_duration(action.fraction, governing_timing(cfg, target))
        return UnifiedCommand(pair=target, hold_seconds=hold)
    return UnifiedCommand(pair=target)


# ---------------------------------------------------------------------------
# Stock eight-phase layout
# ---------------------------------------------------------------------------


def standard_eight_phase(
    timing: PhaseTiming | None = None,
    sequence: Sequence[tuple[int, int]] | None = None,
) -> RingBarrierConfig:
    """The common eight-phase dual-ring layout.

    Ring 1 = phases 1-4, ring 2 = phases 5-8; the barrier separates
    {1, 2, 5, 6} from {3, 4, 7, 8}.  The default service sequence walks the
    through/left pairs [1,5] -> [2,6] -> [3,7] -> [4,8] and wraps.
    """
    t = timing or PhaseTiming()
    phases = tuple(range(1, 9))
    ring_of = {p: 1 if p <= 4 else 2 for p in phases}
    barrier_of = {p: 1 if p in (1, 2, 5, 6) else 2 for p in phases}
    compat = tuple(
        tuple(
            i != j and ring_of[i] != ring_of[j] and barrier_of[i] == barrier_of[j]
            for j in phases
        )
        for i in phases
    )
    seq = tuple(
        PhasePair(a, b) for a, b in (sequence or [(1, 5), (2, 6), (3, 7), (4, 8)])
    )
    return RingBarrierConfig(
        phases=phases,
        ring_of=ring_of,
        barrier_of=barrier_of,
        compat=compat,
        timing={p: t for p in phases},
        sequence=seq,
    )
