"""Controller engine and UDP front-end tests."""
from __future__ import annotations

import random
import socket

import pytest

from phasebridge import wire
from phasebridge.clocks import MonotonicClock
from phasebridge.controller import (
    ControllerServer,
    EnginePhase,
    FaultMode,
    SignalControllerCore,
)
from phasebridge.model import standard_eight_phase
from phasebridge.transport import UdpTransport
from phasebridge.wire import MsgType, ObjectId, WireMessage, decode, encode


def set_call(core: SignalControllerCore, mask: int, now: float, rid: int = 1):
    frame = encode(WireMessage(MsgType.SET, rid, ObjectId.VEH_CALL, bytes([mask])))
    resp = core.handle_datagram(frame, now)
    return None if resp is None else decode(resp)


def get_obj(core: SignalControllerCore, obj: int, now: float, rid: int = 2):
    frame = encode(WireMessage(MsgType.GET, rid, obj))
    resp = core.handle_datagram(frame, now)
    return None if resp is None else decode(resp)


def test_startup_rests_in_first_sequence_pair():
    core = SignalControllerCore(standard_eight_phase())
    assert core.engine is EnginePhase.RESTING
    assert core.green_phases() == (1, 5)
    assert core.events[0].event == "startup"
    assert core.events[0].greens == (1, 5)


def test_nominal_transition_timeline():
    """Yellow for 3 s, all-red for 2 s, new greens at exactly t+5."""
    core = SignalControllerCore(standard_eight_phase())
    resp = set_call(core, 0x22, now=10.0)  # {2,6} while resting on {1,5}
    assert resp.msg_type is MsgType.SET_RESPONSE

    core.advance(11.0)
    assert core.engine is EnginePhase.YELLOW
    assert core.yellow_phases() == (1, 5)
    assert core.green_phases() == ()

    core.advance(13.5)  # inside all-red
    assert core.engine is EnginePhase.ALL_RED
    assert core.green_phases() == () and core.yellow_phases() == ()

    core.advance(15.0)
    assert core.engine is EnginePhase.MIN_GREEN
    assert core.green_phases() == (2, 6)

    times = {e.event: e.t for e in core.events if e.event.endswith("_start")}
    assert times["yellow_start"] == 10.0
    assert times["all_red_start"] == 13.0
    assert times["green_start"] == 15.0


def test_call_during_min_green_is_latched_until_expiry():
    core = SignalControllerCore(standard_eight_phase())
    set_call(core, 0x22, now=0.0)
    core.advance(5.0)  # green on {2,6} from t=5, min green runs to t=8
    assert core.green_phases() == (2, 6)
    resp = set_call(core, 0x44, now=6.0)
    assert resp.msg_type is MsgType.SET_RESPONSE
    assert core.engine is EnginePhase.MIN_GREEN  # not yellow yet
    core.advance(8.0)
    assert core.engine is EnginePhase.YELLOW
    yellow = [e for e in core.events if e.event == "yellow_start"]
    assert yellow[-1].t == 8.0  # exactly at min-green expiry, not at the call


def test_latest_call_wins_during_transition():
    core = SignalControllerCore(standard_eight_phase())
    set_call(core, 0x22, now=0.0)
    set_call(core, 0x44, now=1.0)  # supersedes {2,6} during yellow
    core.advance(5.0)
    assert core.green_phases() == (3, 7)


def test_call_for_served_pair_is_noop_and_cancels_pending():
    core = SignalControllerCore(standard_eight_phase())
    core.advance(1.0)
    set_call(core, 0x22, now=1.0)  # latch a change ... while resting: yellow starts
    assert core.engine is EnginePhase.YELLOW
    core2 = SignalControllerCore(standard_eight_phase())
    # latch during min green, then cancel by re-calling the active pair
    set_call(core2, 0x22, now=0.0)
    core2.advance(5.0)
    set_call(core2, 0x44, now=5.5)
    set_call(core2, 0x22, now=6.0)  # same as active -> no-op, clears pending
    core2.advance(30.0)
    assert core2.green_phases() == (2, 6)
    assert core2.engine is EnginePhase.RESTING
    assert any(e.event == "call_noop" for e in core2.events)


@pytest.mark.parametrize(
    "mask", [0x00, 0x03, 0x30, 0x06, 0xFF]  # empty, {1,2}, {5,6}, {2,3}, everything
)
def test_unserviceable_calls_rejected_with_conflict_code(mask):
    core = SignalControllerCore(standard_eight_phase())
    resp = set_call(core, mask, now=0.0)
    assert resp.msg_type is MsgType.ERROR
    assert resp.payload == bytes([wire.ERR_CONFLICTING_CALL])
    assert core.green_phases() == (1, 5)  # display untouched


def test_single_phase_call_is_serviceable():
    core = SignalControllerCore(standard_eight_phase())
    resp = set_call(core, 0x02, now=0.0)  # just phase 2
    assert resp.msg_type is MsgType.SET_RESPONSE
    core.advance(5.0)
    assert core.green_phases() == (2,)


def test_get_status_objects_echo_request():
    core = SignalControllerCore(standard_eight_phase())
    resp = get_obj(core, ObjectId.STATUS_GREEN, now=0.0, rid=0x1234)
    assert resp.msg_type is MsgType.GET_RESPONSE
    assert resp.request_id == 0x1234
    assert resp.object_id == ObjectId.STATUS_GREEN
    assert resp.payload == bytes([0x11])  # {1,5}
    assert get_obj(core, ObjectId.STATUS_RED, 0.0).payload == bytes([0xEE])
    assert get_obj(core, ObjectId.STATUS_YELLOW, 0.0).payload == bytes([0x00])


def test_get_pending_call_mask():
    core = SignalControllerCore(standard_eight_phase())
    assert get_obj(core, ObjectId.VEH_CALL, 0.0).payload == b"\x00"
    set_call(core, 0x22, now=0.0)
    assert get_obj(core, ObjectId.VEH_CALL, 0.5).payload == b"\x22"


def test_protocol_error_responses():
    core = SignalControllerCore(standard_eight_phase())
    # unknown object
    resp = get_obj(core, 0x55, now=0.0)
    assert resp.msg_type is MsgType.ERROR
    assert resp.payload == bytes([wire.ERR_UNKNOWN_OBJECT])
    # SET on a read-only status object
    frame = encode(WireMessage(MsgType.SET, 9, ObjectId.STATUS_RED, b"\x01"))
    assert decode(core.handle_datagram(frame, 0.0)).payload == bytes(
        [wire.ERR_UNKNOWN_OBJECT]
    )
    # malformed: wrong payload length on a call
    frame = encode(WireMessage(MsgType.SET, 9, ObjectId.VEH_CALL, b"\x11\x22"))
    assert decode(core.handle_datagram(frame, 0.0)).payload == bytes(
        [wire.ERR_MALFORMED]
    )
    # undecodable frame still gets an answer, echoing what looks like the id
    resp = decode(core.handle_datagram(bytes.fromhex("02FF00AA0100"), 0.0))
    assert resp.msg_type is MsgType.ERROR
    assert resp.request_id == 0x00AA
    assert resp.payload == bytes([wire.ERR_MALFORMED])
    # response-type frames are not valid requests here
    frame = encode(WireMessage(MsgType.SET_RESPONSE, 3, ObjectId.VEH_CALL, b"\x00"))
    assert decode(core.handle_datagram(frame, 0.0)).payload == bytes(
        [wire.ERR_MALFORMED]
    )


def test_fault_modes():
    core = SignalControllerCore(standard_eight_phase())
    core.set_fault(FaultMode.SILENT, 0.0)
    assert set_call(core, 0x22, now=0.0) is None
    assert get_obj(core, ObjectId.STATUS_GREEN, 0.0) is None
    core.set_fault(FaultMode.REJECT_CALLS, 1.0)
    assert get_obj(core, ObjectId.STATUS_GREEN, 1.0).msg_type is MsgType.GET_RESPONSE
    resp = set_call(core, 0x22, now=1.0)
    assert resp.msg_type is MsgType.ERROR
    assert resp.payload == bytes([wire.ERR_CONFLICTING_CALL])
    core.set_fault(FaultMode.NORMAL, 2.0)
    assert set_call(core, 0x22, now=2.0).msg_type is MsgType.SET_RESPONSE


def test_safety_fuzz_never_greens_conflicting_phases():
    """Short random-call soak; the acceptance suite runs the long version."""
    cfg = standard_eight_phase()
    core = SignalControllerCore(cfg)
    rng = random.Random(31337)
    t = 0.0
    for _ in range(800):
        t += rng.uniform(0.0, 1.0)
        set_call(core, rng.randint(0, 255), now=t)
    for ev in core.events:
        for i, a in enumerate(ev.greens):
            for b in ev.greens[i + 1 :]:
                assert cfg.ring_of[a] != cfg.ring_of[b]
                assert cfg.barrier_of[a] == cfg.barrier_of[b]


# ---------------------------------------------------------------------------
# UDP front end
# ---------------------------------------------------------------------------


def test_server_round_trips_over_real_sockets():
    clock = MonotonicClock()
    core = SignalControllerCore(standard_eight_phase(), start_time=clock.now())
    server = ControllerServer(core, clock, port=0, control_port=0)
    server.start()
    try:
        tr = UdpTransport("127.0.0.1", server.port, timeout=1.0)
        resp = tr.exchange(MsgType.GET, ObjectId.STATUS_GREEN)
        assert resp is not None and resp.payload == bytes([0x11])
        resp = tr.exchange(MsgType.SET, ObjectId.VEH_CALL, b"\x22")
        assert resp is not None and resp.msg_type is MsgType.SET_RESPONSE
        tr.close()
    finally:
        server.stop()


def test_server_control_channel_injects_faults():
    clock = MonotonicClock()
    core = SignalControllerCore(standard_eight_phase(), start_time=clock.now())
    server = ControllerServer(core, clock, port=0, control_port=0)
    server.start()
    try:
        with socket.create_connection(("127.0.0.1", server.control_port), timeout=2.0) as s:
            fh = s.makefile("rw", encoding="utf-8")
            fh.write("fault silent\n")
            fh.flush()
            assert fh.readline().strip() == "ok"
            fh.write("state\n")
            fh.flush()
            line = fh.readline()
            assert line.startswith("ok ") and '"fault": "silent"' in line
            fh.write("bogus\n")
            fh.flush()
            assert fh.readline().startswith("err")
        tr = UdpTransport("127.0.0.1", server.port, timeout=0.3)
        assert tr.exchange(MsgType.GET, ObjectId.STATUS_GREEN) is None  # silent now
        tr.close()
    finally:
        server.stop()
