"""Wire codec tests: frozen frame examples, masks, decode failures, fuzz."""
from __future__ import annotations

import random

import pytest

from phasebridge.errors import EncodeError
from phasebridge.model import Color, PhasePair
from phasebridge.wire import (
    DecodeError,
    DecodeFailure,
    MsgType,
    ObjectId,
    WireMessage,
    assemble_signal_state,
    decode,
    encode,
    mask_to_phases,
    pair_to_mask,
    phases_to_mask,
)


def test_frozen_get_frame():
    frame = encode(WireMessage(MsgType.GET, 0x002A, ObjectId.STATUS_RED))
    assert frame == bytes.fromhex("0101002a0100")


def test_frozen_set_frame():
    frame = encode(
        WireMessage(MsgType.SET, 1, ObjectId.VEH_CALL, bytes([pair_to_mask(PhasePair(1, 5))]))
    )
    assert frame == bytes.fromhex("0102000110 0111".replace(" ", ""))


def test_frozen_get_response_frame():
    frame = encode(WireMessage(MsgType.GET_RESPONSE, 7, ObjectId.STATUS_GREEN, b"\x22"))
    assert frame == bytes.fromhex("018100070301 22".replace(" ", ""))


def test_phase_masks():
    assert pair_to_mask(PhasePair(1, 5)) == 0x11
    assert pair_to_mask(PhasePair(4, 8)) == 0x88
    assert phases_to_mask({2, 6}) == 0x22
    assert phases_to_mask({3, 7}) == 0x44
    assert phases_to_mask(()) == 0x00
    with pytest.raises(EncodeError):
        phases_to_mask({9})


def test_mask_round_trip_all_bytes():
    for mask in range(256):
        assert phases_to_mask(mask_to_phases(mask)) == mask


@pytest.mark.parametrize(
    "data,failure",
    [
        (b"", DecodeFailure.TRUNCATED),
        (bytes.fromhex("010100"), DecodeFailure.TRUNCATED),
        (bytes.fromhex("0101002a0105ff"), DecodeFailure.TRUNCATED),  # payload short
        (bytes.fromhex("0201002a0100"), DecodeFailure.BAD_VERSION),
        (bytes.fromhex("0155002a0100"), DecodeFailure.BAD_TYPE),
        (bytes.fromhex("0101002a0100ff"), DecodeFailure.LENGTH_MISMATCH),  # trailing
    ],
)
def test_decode_failures_are_classified(data, failure):
    with pytest.raises(DecodeError) as err:
        decode(data)
    assert err.value.failure is failure


def test_encode_field_bounds():
    with pytest.raises(EncodeError):
        encode(WireMessage(MsgType.GET, 0x1_0000, 1))
    with pytest.raises(EncodeError):
        encode(WireMessage(MsgType.GET, 1, 0x100))
    with pytest.raises(EncodeError):
        encode(WireMessage(MsgType.SET, 1, 1, bytes(256)))


def test_round_trip_fuzz():
    rng = random.Random(2024)
    types = list(MsgType)
    for _ in range(2000):
        msg = WireMessage(
            msg_type=types[rng.randrange(len(types))],
            request_id=rng.randint(0, 0xFFFF),
            object_id=rng.randint(0, 0xFF),
            payload=bytes(rng.randint(0, 255) for _ in range(rng.randint(0, 32))),
        )
        assert decode(encode(msg)) == msg


def test_decode_never_raises_anything_but_decode_error():
    rng = random.Random(77)
    for _ in range(5000):
        blob = bytes(rng.randint(0, 255) for _ in range(rng.randint(0, 16)))
        try:
            decode(blob)
        except DecodeError as exc:
            assert isinstance(exc.failure, DecodeFailure)


def test_assemble_signal_state_priorities():
    # green beats yellow beats red; unlit defaults to red
    state = assemble_signal_state(
        red_mask=0xFF, yellow_mask=0x22, green_mask=0x21, at=1.5, phases=range(1, 9)
    )
    assert state.colors[1] is Color.GREEN
    assert state.colors[6] is Color.GREEN  # green wins over yellow
    assert state.colors[2] is Color.YELLOW
    assert state.colors[3] is Color.RED
    assert state.phases_in(Color.GREEN) == {1, 6}
    assert state.polled_at == 1.5
    assert state.poll_seq == 0  # unassigned until a cache publishes it
