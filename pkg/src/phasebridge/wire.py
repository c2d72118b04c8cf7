"""Binary request/response protocol spoken between middleware and controller.

Fixed six-byte header followed by the payload:

    Format (big-endian):
        u8   version        (currently 0x01)
        u8   msg_type
        u16  request_id
        u8   object_id
        u8   payload_len    (L)
        L*u8 payload

Phase sets travel as single-byte bitmasks: bit (n-1) set means phase n.
Controllers answer GET with GET_RESPONSE, SET with SET_RESPONSE, and
anything unacceptable with ERROR carrying a one-byte error code.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Mapping

from .errors import EncodeError, PhaseBridgeError
from .model import Color, PhasePair

PROTOCOL_VERSION = 0x01

_HEADER = struct.Struct(">BBHBB")
HEADER_LEN = _HEADER.size  # 6


class MsgType(IntEnum):
    GET = 0x01
    SET = 0x02
    GET_RESPONSE = 0x81
    SET_RESPONSE = 0x82
    ERROR = 0xFF


class ObjectId(IntEnum):
    STATUS_RED = 0x01
    STATUS_YELLOW = 0x02
    STATUS_GREEN = 0x03
    VEH_CALL = 0x10


# One-byte codes carried in the payload of ERROR responses.
ERR_MALFORMED = 0x01
ERR_UNKNOWN_OBJECT = 0x02
ERR_CONFLICTING_CALL = 0x03

STATUS_OBJECTS = (ObjectId.STATUS_RED, ObjectId.STATUS_YELLOW, ObjectId.STATUS_GREEN)


class DecodeFailure(Enum):
    TRUNCATED = "truncated"
    BAD_VERSION = "bad_version"
    BAD_TYPE = "bad_type"
    LENGTH_MISMATCH = "length_mismatch"


class DecodeError(PhaseBridgeError):
    def __init__(self, failure: DecodeFailure, detail: str):
        super().__init__(f"{failure.value}: {detail}")
        self.failure = failure


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    request_id: int
    object_id: int
    payload: bytes = b""
    version: int = PROTOCOL_VERSION


def encode(msg: WireMessage) -> bytes:
    if not 0 <= msg.request_id <= 0xFFFF:
        raise EncodeError(f"request_id {msg.request_id} does not fit in u16")
    if not 0 <= msg.object_id <= 0xFF:
        raise EncodeError(f"object_id {msg.object_id} does not fit in u8")
    if len(msg.payload) > 0xFF:
        raise EncodeError(f"payload of {len(msg.payload)} bytes exceeds 255")
    header = _HEADER.pack(
        msg.version, int(msg.msg_type), msg.request_id, msg.object_id, len(msg.payload)
    )
    return header + msg.payload


def decode(data: bytes) -> WireMessage:
    if len(data) < HEADER_LEN:
        raise DecodeError(
            DecodeFailure.TRUNCATED, f"frame of {len(data)} bytes is shorter than header"
        )
    version, mtype, request_id, object_id, length = _HEADER.unpack_from(data)
    if version != PROTOCOL_VERSION:
        raise DecodeError(DecodeFailure.BAD_VERSION, f"version byte 0x{version:02X}")
    try:
        msg_type = MsgType(mtype)
    except ValueError:
        raise DecodeError(
            DecodeFailure.BAD_TYPE, f"message type byte 0x{mtype:02X}"
        ) from None
    body = data[HEADER_LEN:]
    if len(body) < length:
        raise DecodeError(
            DecodeFailure.TRUNCATED,
            f"payload declares {length} bytes but {len(body)} present",
        )
    if len(body) > length:
        raise DecodeError(
            DecodeFailure.LENGTH_MISMATCH,
            f"{len(body) - length} trailing bytes beyond declared payload",
        )
    return WireMessage(
        msg_type=msg_type,
        request_id=request_id,
        object_id=object_id,
        payload=bytes(body),
        version=version,
    )


# ---------------------------------------------------------------------------
# Phase bitmask helpers
# ---------------------------------------------------------------------------


def phases_to_mask(phases: Iterable[int]) -> int:
    mask = 0
    for p in phases:
        if not 1 <= p <= 8:
            raise EncodeError(f"phase {p} cannot be represented in a one-byte mask")
        mask |= 1 << (p - 1)
    return mask


def pair_to_mask(pair: PhasePair) -> int:
    return phases_to_mask(pair.phases)


def mask_to_phases(mask: int) -> set[int]:
    """Inverse of :func:`phases_to_mask` for masks within eight bits."""
    return {n for n in range(1, 9) if mask >> (n - 1) & 1}


# ---------------------------------------------------------------------------
# Signal-state snapshots assembled from the three status masks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalState:
    """Per-phase display colors captured in one polling cycle.

    ``polled_at`` is the clock reading when the cycle completed; ``poll_seq``
    is assigned by the cache when the snapshot is published.
    """

    colors: Mapping[int, Color]
    polled_at: float
    poll_seq: int = 0

    def phases_in(self, color: Color) -> set[int]:
        return {p for p, c in self.colors.items() if c is color}

    def to_dict(self) -> dict:
        return {
            "polled_at": self.polled_at,
            "poll_seq": self.poll_seq,
            "colors": {str(p): c.value for p, c in sorted(self.colors.items())},
        }


def assemble_signal_state(
    red_mask: int,
    yellow_mask: int,
    green_mask: int,
    at: float,
    phases: Iterable[int],
) -> SignalState:
    """Merge the three status masks into one snapshot.

    When masks disagree, the brighter indication wins (green over yellow
    over red); a phase lit in no mask reads as red.
    """
    del red_mask  # red is the default indication; the mask adds nothing
    yellows = mask_to_phases(yellow_mask)
    greens = mask_to_phases(green_mask)
    colors: dict[int, Color] = {}
    for p in phases:
        if p in greens:
            colors[p] = Color.GREEN
        elif p in yellows:
            colors[p] = Color.YELLOW
        else:
            colors[p] = Color.RED
    return SignalState(colors=colors, polled_at=at)
