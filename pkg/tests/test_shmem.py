import pytest
from hypothesis import given
from hypothesis import strategies as st

from isoscope.engine import Simulator
from isoscope.errors import BadCapacity, WrongEndpoint
from isoscope.isolator import Isolator, Mask, TickWork
from isoscope.shmem import Channel, channel_create, round_trip_bench


@pytest.mark.parametrize("cap", [0, 1, 3, 6, 100])
def test_capacity_must_be_power_of_two(cap):
    with pytest.raises(BadCapacity):
        channel_create(cap, 0, 1)


def test_post_then_poll():
    ch = channel_create(4, 0, 1)
    assert ch.post(0, b"m1") == 0
    msg = ch.poll(1)
    assert msg.payload == b"m1" and msg.seq == 0
    assert ch.poll(1) is None


def test_full_channel_refuses():
    ch = channel_create(2, 0, 1)
    assert ch.post(0, b"a") == 0
    assert ch.post(0, b"b") == 1
    assert ch.post(0, b"c") is None
    assert len(ch) == 2


def test_wrong_endpoints():
    ch = channel_create(4, 0, 1)
    with pytest.raises(WrongEndpoint):
        ch.post(1, b"x")
    with pytest.raises(WrongEndpoint):
        ch.poll(0)


def test_loopback_is_flagged():
    ch = channel_create(4, 2, 2)
    assert ch.loopback
    ch.post(2, b"self")
    assert ch.poll(2).payload == b"self"


def test_oversized_payload_rejected():
    ch = Channel(4, 0, 1, max_payload=8)
    with pytest.raises(ValueError):
        ch.post(0, b"123456789")


def test_callback_runs_inside_isolator_tick():
    sim = Simulator(3)
    iso = Isolator(sim)
    ch = Channel(8, 0, 2, channel_id="c0", clock=lambda: sim.now)
    got = []
    ch.register_callback(lambda m: got.append(m.payload))
    iso.register_channel(2, ch)
    iso.start(2, Mask.CLOCK)
    ch.post(0, b"hello")
    assert got == []
    report = iso.tick(2, {TickWork.SCHED})
    assert got == [b"hello"]
    assert ("message:c0", iso.costs.message) in report.items


@given(st.lists(st.one_of(st.binary(max_size=16), st.none()), max_size=200),
       st.sampled_from([2, 4, 8, 16]))
def test_fifo_no_loss_no_dup(ops, cap):
    """None means poll; bytes means post.  Everything accepted comes out once, in order."""
    ch = channel_create(cap, 0, 1)
    accepted, received = [], []
    for op in ops:
        if op is None:
            msg = ch.poll(1)
            if msg is not None:
                received.append(msg.payload)
        elif ch.post(0, op) is not None:
            accepted.append(op)
        assert 0 <= len(ch) <= cap
    while (msg := ch.poll(1)) is not None:
        received.append(msg.payload)
    assert received == accepted


def test_sim_bench_lands_in_band():
    res = round_trip_bench("sim", 10, 1000, hop_delay_ns=100, poll_granularity_ns=50)
    assert res.stats.count == 10_000
    assert res.lost == res.corrupt == 0
    assert 200 <= res.stats.min_ns and res.stats.max_ns <= 300


def test_sim_bench_degenerate_channel():
    res = round_trip_bench("sim", 1, 50, hop_delay_ns=0, poll_granularity_ns=0)
    assert res.stats.min_ns == res.stats.max_ns == 0


def test_sim_bench_is_deterministic():
    a = round_trip_bench("sim", 2, 300, seed=4)
    b = round_trip_bench("sim", 2, 300, seed=4)
    assert (a.samples == b.samples).all()


def test_bench_rejects_bad_arguments():
    with pytest.raises(ValueError):
        round_trip_bench("sim", 0, 10)
    with pytest.raises(ValueError):
        round_trip_bench("quantum", 1, 10)


def test_live_bench_small():
    res = round_trip_bench("live", 2, 200, pinning=(0, 0))
    assert res.pinning_fallback and res.pinned is None
    assert res.stats.count == 400
    assert res.lost == res.duplicated == res.corrupt == 0
    assert res.stats.min_ns > 0
