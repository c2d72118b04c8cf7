"""Phase-manager tests: command chain, failure latch, recovery, drift."""
from __future__ import annotations

import time

import pytest

from phasebridge.controller import FaultMode
from phasebridge.events import EventKind
from phasebridge.middleware import (
    ManagerMode,
    MiddlewareConfig,
    SubmitStatus,
    TimeoutCause,
    _next_grid,
)
from phasebridge.errors import StateError
from phasebridge.model import Action, Color, PhasePair


def by_kind(stack, kind):
    return [r for r in stack.events.records() if r.kind is kind]


def for_cmd(stack, cmd):
    return [r for r in stack.events.records() if r.detail.get("cmd") == cmd]


# ---------------------------------------------------------------------------
# Polling and the happy path
# ---------------------------------------------------------------------------


def test_poller_populates_cache(virtual_stack):
    st = virtual_stack()
    st.run_for(0.55)
    snap = st.manager.signal_state()
    assert snap is not None
    assert sorted(snap.colors) == list(range(1, 9))
    assert sorted(snap.phases_in(Color.GREEN)) == [1, 5]
    oks = by_kind(st, EventKind.POLL_OK)
    assert len(oks) == 6  # t = 0.0, 0.1, ..., 0.5
    assert [r.detail["poll_seq"] for r in oks] == [1, 2, 3, 4, 5, 6]


def test_selection_runs_full_event_chain(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    res = st.manager.submit_action(Action.selection(PhasePair(2, 6)))
    assert res.status is SubmitStatus.ACCEPTED
    assert st.manager.mode is ManagerMode.ON_HOLD
    st.run_for(6.0)
    assert st.manager.mode is ManagerMode.IDLE
    assert st.manager.current_pair == PhasePair(2, 6)

    kinds = [r.kind for r in for_cmd(st, res.cmd)]
    assert kinds[0] is EventKind.ACTION_OUT
    assert kinds[1] is EventKind.CONVERTED
    assert kinds[2] is EventKind.DISPATCHED
    assert kinds[3] is EventKind.SET_ACKED
    assert kinds[-2] is EventKind.VERIFY_MATCH
    assert kinds[-1] is EventKind.HOLD_RELEASED
    assert set(kinds[4:-2]) == {EventKind.VERIFY_POLL}

    polls = [r for r in for_cmd(st, res.cmd) if r.kind is EventKind.VERIFY_POLL]
    assert polls[-1].detail["matched"] is True
    assert all(p.detail["matched"] is False for p in polls[:-1])
    # transition = 3 s yellow + 2 s clearance; release follows within a poll
    # period plus a verification period of the display turning green
    rel = for_cmd(st, res.cmd)[-1]
    assert 5.0 <= rel.detail["held_s"] <= 5.3


def test_noop_selection_releases_on_first_check(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    res = st.manager.submit_action(Action.selection(PhasePair(1, 5)))
    st.run_for(0.5)
    rel = by_kind(st, EventKind.HOLD_RELEASED)
    assert len(rel) == 1
    assert rel[0].detail["held_s"] <= st.mcfg.verify_interval + 1e-6
    assert st.manager.current_pair == PhasePair(1, 5)
    assert res.command is not None and res.command.hold_seconds is None


def test_switch_keep_converts_to_current_pair(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    res = st.manager.submit_action(Action.switch(0))
    assert res.command.pair == PhasePair(1, 5)
    st.run_for(0.5)
    assert st.manager.mode is ManagerMode.IDLE
    assert st.manager.current_pair == PhasePair(1, 5)


def test_duration_holds_green_anchored_at_observation(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    res = st.manager.submit_action(Action.duration(0.5))
    assert res.command.pair == PhasePair(2, 6)  # successor of (1,5)
    assert res.command.hold_seconds == pytest.approx(11.5)  # 3 + 0.5*(20-3)
    st.run_for(20.0)
    assert st.manager.mode is ManagerMode.IDLE

    match = [r for r in for_cmd(st, res.cmd) if r.kind is EventKind.VERIFY_MATCH][0]
    rel = [r for r in for_cmd(st, res.cmd) if r.kind is EventKind.HOLD_RELEASED][0]
    assert rel.t == pytest.approx(match.detail["green_at"] + 11.5, abs=1e-9)
    assert rel.detail["held_s"] == pytest.approx(rel.t - for_cmd(st, res.cmd)[2].t)


# ---------------------------------------------------------------------------
# Gating: one command at a time
# ---------------------------------------------------------------------------


def test_second_command_dropped_while_on_hold(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    first = st.manager.submit_action(Action.selection(PhasePair(2, 6)))
    second = st.manager.submit_action(Action.selection(PhasePair(3, 7)))
    assert second.status is SubmitStatus.DROPPED
    assert second.reason == "previous command still held"
    dropped = by_kind(st, EventKind.DROPPED)
    assert dropped[0].detail == {"cmd": second.cmd, "reason": "on_hold"}
    assert not [
        r for r in for_cmd(st, second.cmd) if r.kind is EventKind.DISPATCHED
    ]
    st.run_for(6.0)
    # the dropped command did not disturb the in-flight one
    assert st.manager.current_pair == PhasePair(2, 6)
    assert [r.kind for r in for_cmd(st, first.cmd)][-1] is EventKind.HOLD_RELEASED


def test_advance_from_off_sequence_pair_is_rejected_not_fatal(virtual_stack):
    """A SELECTION may park the manager on an admissible pair with no
    sequence successor; asking to advance from there must refuse cleanly."""
    st = virtual_stack()
    st.run_for(0.25)
    sel = st.manager.submit_action(Action.selection(PhasePair(1, 6)))
    assert sel.status is SubmitStatus.ACCEPTED
    st.run_for(8.0)
    assert st.manager.current_pair == PhasePair(1, 6)

    for bad in (Action.switch(1), Action.duration(0.2)):
        res = st.manager.submit_action(bad)
        assert res.status is SubmitStatus.CONFLICT_REJECTED
        assert "sequence" in res.reason
    assert st.manager.mode is ManagerMode.IDLE
    # keeping the current pair needs no successor, so bit 0 still works
    keep = st.manager.submit_action(Action.switch(0))
    assert keep.status is SubmitStatus.ACCEPTED
    st.run_for(1.0)
    assert st.manager.current_pair == PhasePair(1, 6)


def test_conflicting_selection_rejected_without_dispatch(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    res = st.manager.submit_action(Action.selection(PhasePair(1, 2)))
    assert res.status is SubmitStatus.CONFLICT_REJECTED
    assert st.manager.mode is ManagerMode.IDLE
    kinds = [r.kind for r in for_cmd(st, res.cmd)]
    assert kinds == [EventKind.ACTION_OUT, EventKind.CONFLICT_REJECTED]
    # manager still fully operational afterwards
    ok = st.manager.submit_action(Action.selection(PhasePair(4, 8)))
    assert ok.status is SubmitStatus.ACCEPTED


# ---------------------------------------------------------------------------
# Communication failure, latch, recovery
# ---------------------------------------------------------------------------


def test_comm_failure_latches_after_consecutive_poll_timeouts(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    st.core.set_fault(FaultMode.SILENT, st.clock.now())
    st.run_for(8.0)

    timeouts = by_kind(st, EventKind.POLL_TIMEOUT)
    assert [r.detail["consecutive"] for r in timeouts] == [1, 2, 3, 4, 5]
    latch = by_kind(st, EventKind.TIMEOUT_SET)
    assert len(latch) == 1
    assert latch[0].detail["cause"] == "comm_failure"
    assert st.manager.mode is ManagerMode.TIMEOUT
    assert st.manager.timeout_cause is TimeoutCause.COMM_FAILURE

    # poller is halted while latched: no wire events after the latch
    after = [
        r
        for r in st.events.records()
        if r.t > latch[0].t and r.kind in (EventKind.POLL_OK, EventKind.POLL_TIMEOUT)
    ]
    assert after == []

    res = st.manager.submit_action(Action.switch(1))
    assert res.status is SubmitStatus.IN_TIMEOUT
    assert by_kind(st, EventKind.DROPPED)[-1].detail["reason"] == "manager_in_timeout"


def test_recover_requires_timeout_mode(virtual_stack):
    st = virtual_stack()
    with pytest.raises(StateError):
        st.manager.recover()


def test_recover_fails_until_controller_answers(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    st.core.set_fault(FaultMode.SILENT, st.clock.now())
    st.run_for(8.0)
    assert st.manager.mode is ManagerMode.TIMEOUT

    res = st.manager.recover()
    assert not res.ok
    assert res.mode is ManagerMode.TIMEOUT
    assert res.reason == "controller unreachable"
    assert st.manager.mode is ManagerMode.TIMEOUT  # still latched

    st.core.set_fault(FaultMode.NORMAL, st.clock.now())
    res = st.manager.recover()
    assert res.ok and res.mode is ManagerMode.IDLE
    assert res.observed_greens == (1, 5)
    assert st.manager.current_pair == PhasePair(1, 5)
    rec = by_kind(st, EventKind.RECOVERED)
    assert rec and rec[0].detail["pair"] == [1, 5]

    # polling resumes and commands work again
    n_ok = len(by_kind(st, EventKind.POLL_OK))
    st.run_for(0.5)
    assert len(by_kind(st, EventKind.POLL_OK)) > n_ok
    assert st.manager.submit_action(Action.switch(1)).status is SubmitStatus.ACCEPTED


def test_transition_timeout_when_controller_refuses_calls(virtual_stack):
    st = virtual_stack()
    st.run_for(0.25)
    st.core.set_fault(FaultMode.REJECT_CALLS, st.clock.now())
    res = st.manager.submit_action(Action.selection(PhasePair(2, 6)))
    assert res.status is SubmitStatus.ACCEPTED  # dispatch succeeded; wire said no
    st.run_for(12.0)

    latch = by_kind(st, EventKind.TIMEOUT_SET)
    assert len(latch) == 1
    assert latch[0].detail["cause"] == "transition_timeout"
    dispatch = [r for r in for_cmd(st, res.cmd) if r.kind is EventKind.DISPATCHED][0]
    waited = latch[0].t - dispatch.t
    assert (
        st.mcfg.transition_timeout
        <= waited
        <= st.mcfg.transition_timeout + st.mcfg.verify_interval + 1e-6
    )
    assert st.manager.timeout_cause is TimeoutCause.TRANSITION_TIMEOUT
    assert not [r for r in for_cmd(st, res.cmd) if r.kind is EventKind.HOLD_RELEASED]


# ---------------------------------------------------------------------------
# Drift accounting
# ---------------------------------------------------------------------------


def test_drift_latch_needs_consecutive_overruns(virtual_stack):
    st = virtual_stack()
    mgr = st.manager
    for _ in range(4):
        assert mgr.report_step_duration(0.3, 0.25) is True
    assert mgr.mode is ManagerMode.IDLE  # four in a row: not yet
    assert mgr.report_step_duration(0.1, 0.25) is False  # resets the streak
    for i in range(5):
        assert mgr.report_step_duration(0.26, 0.25) is True
    assert mgr.mode is ManagerMode.TIMEOUT
    assert mgr.timeout_cause is TimeoutCause.SIM_DRIFT
    drifts = by_kind(st, EventKind.DRIFT)
    assert [r.detail["consecutive"] for r in drifts] == [1, 2, 3, 4, 1, 2, 3, 4, 5]


def test_exact_budget_is_not_drift(virtual_stack):
    st = virtual_stack()
    assert st.manager.report_step_duration(0.25, 0.25) is False
    assert not by_kind(st, EventKind.DRIFT)


# ---------------------------------------------------------------------------
# Scheduling grid
# ---------------------------------------------------------------------------


def test_next_grid_is_strictly_in_the_future():
    # 4.3/0.1 rounds down in floating point, so the naive floor+1 lands
    # exactly on `now`; the helper must step past it.
    assert _next_grid(4.3, 0.1) > 4.3
    assert _next_grid(0.0, 0.25) == 0.25
    for k in range(2000):
        t = k * 0.1
        nxt = _next_grid(t, 0.1)
        assert nxt > t
        assert nxt - t <= 0.1 + 1e-9


def test_submit_validates_action_first(virtual_stack):
    st = virtual_stack()
    from phasebridge.errors import ActionError

    with pytest.raises(ActionError):
        st.manager.submit_action(Action.duration(1.5))
    assert st.manager.mode is ManagerMode.IDLE


# ---------------------------------------------------------------------------
# Threaded (wall-clock) mode over a real socket
# ---------------------------------------------------------------------------


def wait_for(pred, timeout: float = 5.0) -> bool:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(0.01)
    return False


def test_threaded_stack_full_cycle_and_recovery(real_stack):
    st = real_stack()
    assert wait_for(lambda: st.manager.signal_state() is not None)
    res = st.manager.submit_action(Action.selection(PhasePair(2, 6)))
    assert res.status is SubmitStatus.ACCEPTED
    assert wait_for(lambda: st.manager.mode is ManagerMode.IDLE)
    assert st.manager.current_pair == PhasePair(2, 6)
    assert [r.kind for r in for_cmd(st, res.cmd)][-1] is EventKind.HOLD_RELEASED

    st.server.set_fault(FaultMode.SILENT)
    assert wait_for(lambda: st.manager.mode is ManagerMode.TIMEOUT, timeout=10.0)
    assert st.manager.timeout_cause is TimeoutCause.COMM_FAILURE
    assert not st.manager.recover().ok

    st.server.set_fault(FaultMode.NORMAL)
    rec = st.manager.recover()
    assert rec.ok
    assert rec.observed_greens == (2, 6)
    assert wait_for(
        lambda: st.events.records()
        and st.events.records()[-1].kind is EventKind.POLL_OK
    )


def test_concurrent_exchanges_never_steal_responses(real_stack):
    # Several threads hammering the shared transport while the manager's own
    # poller runs: every exchange must get *its* response, never time out
    # because a sibling consumed it first.
    import threading

    from phasebridge.wire import MsgType, ObjectId

    st = real_stack()
    failures: list = []

    def hammer(n: int) -> None:
        for _ in range(n):
            resp = st.transport.exchange(MsgType.GET, ObjectId.STATUS_GREEN)
            if resp is None or resp.msg_type is not MsgType.GET_RESPONSE:
                failures.append(resp)

    threads = [threading.Thread(target=hammer, args=(200,)) for _ in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert failures == []
    assert st.manager.mode is ManagerMode.IDLE  # the poller never starved
