import pytest

from rdpsim.kernel import (
    EventKind,
    EventRecord,
    PastTimeError,
    RngStream,
    SimulationAbort,
    Simulator,
    StreamError,
    to_ns,
    to_s,
)


def _collect(sim):
    seen = []
    sim.subscribe(None, lambda ev: seen.append(ev))
    return seen


def test_same_time_dispatch_order_is_insertion_order():
    sim = Simulator(1)
    seen = _collect(sim)
    a = sim.post(EventKind.HEARTBEAT, at_ns=to_ns(5.0), subject="A")
    b = sim.post(EventKind.HEARTBEAT, at_ns=to_ns(5.0), subject="B")
    sim.run_until(10)
    assert [e.subject for e in seen] == ["A", "B"]
    assert a < b


def test_event_at_now_precedes_later_events():
    sim = Simulator(1)
    seen = _collect(sim)
    sim.post(EventKind.HEARTBEAT, at_ns=to_ns(3.0), subject="later")
    sim.post(EventKind.HEARTBEAT, at_ns=0, subject="now")
    sim.run_until(5)
    assert [e.subject for e in seen] == ["now", "later"]


def test_past_time_rejected_with_clock_and_request():
    sim = Simulator(1)
    sim.run_until(10)
    with pytest.raises(PastTimeError, match="past-time") as exc:
        sim.post(EventKind.HEARTBEAT, at_ns=to_ns(9.0))
    assert exc.value.clock == 10.0 and exc.value.requested == 9.0


def test_run_until_on_empty_queue_advances_clock():
    sim = Simulator(1)
    assert sim.run_until(100) == 0
    assert sim.now == 100.0


def test_run_until_counts_dispatches_up_to_end():
    sim = Simulator(1)
    for t in (1, 2, 3):
        sim.post(EventKind.HEARTBEAT, at_ns=to_ns(t))
    assert sim.run_until(2) == 2
    assert sim.pending() == 1
    assert sim.run_until(3) == 1


def test_cancelled_events_are_skipped():
    sim = Simulator(1)
    seen = _collect(sim)
    eid = sim.post(EventKind.HEARTBEAT, at_ns=to_ns(1))
    sim.cancel(eid)
    sim.run_until(2)
    assert seen == []


def test_handler_error_aborts_with_event_id():
    sim = Simulator(1)

    def boom(ev):
        raise RuntimeError("bad state")

    sim.subscribe(EventKind.DETECTION, boom)
    eid = sim.post(EventKind.DETECTION, at_ns=to_ns(1))
    with pytest.raises(SimulationAbort) as exc:
        sim.run_until(2)
    assert exc.value.event_id == eid
    assert "bad state" in str(exc.value)


def test_private_timers_are_not_traced():
    traced = []
    sim = Simulator(1, trace=traced.append)
    fired = []
    sim.call_at(to_ns(1), lambda ev: fired.append(ev.payload["x"]), x=7)
    sim.post(EventKind.HEARTBEAT, at_ns=to_ns(2))
    sim.run_until(3)
    assert fired == [7]
    assert [e.kind for e in traced] == [EventKind.HEARTBEAT]


def test_duplicate_stream_label_rejected():
    sim = Simulator(42)
    sim.fork_stream("faults.node0")
    with pytest.raises(StreamError):
        sim.fork_stream("faults.node0")


def test_stream_draws_depend_on_label_and_seed_only():
    a1 = Simulator(42).fork_stream("a").random()
    a2 = Simulator(42).fork_stream("a").random()
    b = Simulator(42).fork_stream("b").random()
    assert a1 == a2
    assert a1 != b
    assert RngStream.create(43, "a").random() != a1


def test_time_conversion_round_trip():
    assert to_ns(1.5) == 1_500_000_000
    assert to_s(to_ns(2503.5)) == 2503.5
    with pytest.raises(ValueError):
        to_ns(float("nan"))


def test_event_record_serialization_is_canonical():
    ev = EventRecord(to_ns(1.25), EventKind.DETECTION, "p0", 3, {"b": 1, "a": 2}, "hb", seq=9)
    assert ev.to_json() == '{"cause":3,"id":9,"kind":"detection","pattern":"hb","payload":{"a":2,"b":1},"subject":"p0","t":1.25}'
