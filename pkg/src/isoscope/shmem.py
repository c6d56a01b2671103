"""Single-producer/single-consumer post/poll channels and the round-trip bench.

Two flavours share one contract:

* :class:`Channel` is the in-simulation ring, driven by the engine.
* the live bench runs two host processes over a ring in
  ``multiprocessing.shared_memory``. Slot contents are written before the
  head counter is published and read only after the head counter is seen
  (release/acquire order); each slot carries a CRC-32 of its payload so torn
  reads would be caught.
"""
from __future__ import annotations

import logging
import multiprocessing as mp
import os
import time
import zlib
from dataclasses import dataclass, field
from multiprocessing import shared_memory
from typing import Callable

import numpy as np

from .engine import EventKind, Simulator, next_grid
from .errors import BadCapacity, PinningUnavailable, WrongEndpoint
from .measure import LatencyStats, summarize

log = logging.getLogger(__name__)

DEFAULT_MAX_PAYLOAD = 64


@dataclass(frozen=True)
class Message:
    seq: int
    payload: bytes
    posted_at: int


class Channel:
    def __init__(self, capacity: int, producer: int, consumer: int,
                 max_payload: int = DEFAULT_MAX_PAYLOAD, channel_id: str = "ch",
                 clock: Callable[[], int] | None = None):
        if capacity < 2 or capacity & (capacity - 1):
            raise BadCapacity(f"capacity {capacity} is not a power of two >= 2")
        self.id = channel_id
        self.capacity = capacity
        self.producer = producer
        self.consumer = consumer
        self.max_payload = max_payload
        self.loopback = producer == consumer
        self.slots: list[Message | None] = [None] * capacity
        self.head = 0
        self.tail = 0
        self.callbacks: list[Callable[[Message], None]] = []
        self._clock = clock or (lambda: 0)

    def __len__(self) -> int:
        return self.head - self.tail

    def post(self, caller: int, payload: bytes, at: int | None = None) -> int | None:
        """Publish ``payload``; returns its sequence number, or None when full."""
        if caller != self.producer:
            raise WrongEndpoint(f"core {caller} is not the producer of {self.id}")
        payload = bytes(payload)
        if len(payload) > self.max_payload:
            raise ValueError(f"payload of {len(payload)} bytes exceeds {self.max_payload}")
        if self.head - self.tail >= self.capacity:
            return None
        seq = self.head
        self.slots[seq & (self.capacity - 1)] = Message(seq, payload, self._clock() if at is None else at)
        self.head = seq + 1
        assert 0 <= self.head - self.tail <= self.capacity
        return seq

    def poll(self, caller: int) -> Message | None:
        if caller != self.consumer:
            raise WrongEndpoint(f"core {caller} is not the consumer of {self.id}")
        if self.tail == self.head:
            return None
        idx = self.tail & (self.capacity - 1)
        msg = self.slots[idx]
        self.slots[idx] = None
        self.tail += 1
        return msg

    def register_callback(self, callback: Callable[[Message], None]) -> None:
        self.callbacks.append(callback)


def channel_create(capacity: int, producer: int, consumer: int, **kw) -> Channel:
    return Channel(capacity, producer, consumer, **kw)


@dataclass
class BenchResult:
    mode: str
    loops: int
    roundtrips: int
    stats: LatencyStats
    samples: np.ndarray = field(repr=False)
    wall_ns: int = 0
    pinned: tuple[int, int] | None = None
    pinning_fallback: bool = False
    lost: int = 0
    duplicated: int = 0
    corrupt: int = 0
    notes: list[str] = field(default_factory=list)


def round_trip_bench(mode: str = "sim", loops: int = 10, roundtrips_per_loop: int = 1000,
                     pinning: tuple[int, int] | None = None, *, hop_delay_ns: int = 100,
                     poll_granularity_ns: int = 50, seed: int = 0, capacity: int = 64,
                     payload_size: int = DEFAULT_MAX_PAYLOAD, spin_before_yield: int | None = None,
                     sim: Simulator | None = None) -> BenchResult:
    """Measure post -> remote poll -> remote post -> local poll round trips."""
    if loops < 1 or roundtrips_per_loop < 1:
        raise ValueError("loops and roundtrips must be >= 1")
    if mode == "sim":
        return _sim_bench(loops, roundtrips_per_loop, hop_delay_ns, poll_granularity_ns,
                          seed, capacity, payload_size, sim)
    if mode == "live":
        return _live_bench(loops, roundtrips_per_loop, pinning, capacity, payload_size,
                           spin_before_yield)
    raise ValueError(f"unknown bench mode {mode!r}")


def _payload(seq: int, size: int) -> bytes:
    unit = seq.to_bytes(8, "little")
    return (unit * (size // 8 + 1))[:size]


# ---- simulated ------------------------------------------------------------

def _sim_bench(loops, per_loop, hop, gran, seed, capacity, payload_size, sim) -> BenchResult:
    sim = sim or Simulator(2, seed)
    ping_core, pong_core = 0, 1
    ping = Channel(capacity, ping_core, pong_core, payload_size, "ping", clock=lambda: sim.now)
    pong = Channel(capacity, pong_core, ping_core, payload_size, "pong", clock=lambda: sim.now)
    rng = sim.rng.stream("bench/phase")
    phase_ping = int(rng.integers(0, gran)) if gran > 0 else 0
    phase_pong = int(rng.integers(0, gran)) if gran > 0 else 0
    think = sim.rng.stream("bench/think")
    total = loops * per_loop
    samples = np.zeros(total, dtype=np.int64)
    errors = {"lost": 0, "corrupt": 0}
    state = {"k": 0, "t0": 0, "expect": 0}

    def start(ev):
        k = state["k"]
        state["t0"] = sim.now
        seq = ping.post(ping_core, _payload(k, payload_size))
        assert seq is not None
        seen = next_grid(sim.now + hop, gran, phase_pong)
        sim.schedule(seen, pong_core, EventKind.WORKLOAD, action=pong_side)
        return f"ping:{k}"

    def pong_side(ev):
        msg = ping.poll(pong_core)
        if msg is None or msg.seq != state["expect"]:
            errors["lost"] += 1
        state["expect"] += 1
        pong.post(pong_core, msg.payload if msg else b"")
        seen = next_grid(sim.now + hop, gran, phase_ping)
        sim.schedule(seen, ping_core, EventKind.WORKLOAD, action=ping_back)
        return f"pong:{msg.seq if msg else -1}"

    def ping_back(ev):
        k = state["k"]
        msg = pong.poll(ping_core)
        if msg is None or msg.payload != _payload(k, payload_size):
            errors["corrupt"] += 1
        samples[k] = sim.now - state["t0"]
        state["k"] = k + 1
        if k + 1 < total:
            gap = int(think.integers(0, gran)) if gran > 0 else 0
            sim.schedule(sim.now + gap, ping_core, EventKind.WORKLOAD, action=start)
        return f"done:{k}"

    sim.schedule(sim.now, ping_core, EventKind.WORKLOAD, action=start)
    t_start = sim.now
    while state["k"] < total:
        t = sim.peek_time()
        if t is None:
            break
        sim.run_until(t)
    return BenchResult("sim", loops, per_loop, summarize(samples), samples,
                       wall_ns=sim.now - t_start, lost=errors["lost"], corrupt=errors["corrupt"])


# ---- live -----------------------------------------------------------------
# ring layout: [head u64][pad to 64][tail u64][pad to 128][slots ...]
# slot layout: [seq u64][crc u32][len u32][payload ...] padded to SLOT bytes
_HDR = 128
_SLOT_META = 16


def _slot_size(payload_size: int) -> int:
    raw = _SLOT_META + payload_size
    return (raw + 63) // 64 * 64


class _ShmRing:
    def __init__(self, buf, offset: int, capacity: int, payload_size: int):
        self.buf = buf
        self.base = offset
        self.capacity = capacity
        self.mask = capacity - 1
        self.payload_size = payload_size
        self.slot = _slot_size(payload_size)
        self.head = np.ndarray((1,), dtype=np.uint64, buffer=buf, offset=offset)
        self.tail = np.ndarray((1,), dtype=np.uint64, buffer=buf, offset=offset + 64)
        self.meta = np.ndarray((capacity, self.slot // 8), dtype=np.uint64, buffer=buf,
                               offset=offset + _HDR)
        self.slots0 = offset + _HDR
        self._head = 0
        self._tail = 0

    @staticmethod
    def nbytes(capacity: int, payload_size: int) -> int:
        return _HDR + capacity * _slot_size(payload_size)

    def post(self, seq: int, payload: bytes) -> bool:
        h = self._head
        if h - int(self.tail[0]) >= self.capacity:
            return False
        off = self.slots0 + (h & self.mask) * self.slot
        self.buf[off + _SLOT_META: off + _SLOT_META + len(payload)] = payload
        self.meta[h & self.mask, 0] = seq
        self.meta[h & self.mask, 1] = zlib.crc32(payload) | (len(payload) << 32)
        self._head = h + 1
        self.head[0] = h + 1  # publish after the slot is complete
        return True

    def poll(self) -> tuple[int, bytes, bool] | None:
        t = self._tail
        if t == int(self.head[0]):
            return None
        idx = t & self.mask
        seq = int(self.meta[idx, 0])
        word = int(self.meta[idx, 1])
        n = word >> 32
        off = self.slots0 + idx * self.slot + _SLOT_META
        payload = bytes(self.buf[off: off + n])
        ok = zlib.crc32(payload) == (word & 0xFFFF_FFFF)
        self._tail = t + 1
        self.tail[0] = t + 1
        return seq, payload, ok


def _pin(core: int | None) -> None:
    if core is not None:
        os.sched_setaffinity(0, {core})


def _pong_main(shm_name: str, capacity: int, payload_size: int, total: int,
               pong_core: int | None, spin: int) -> None:
    shm = shared_memory.SharedMemory(name=shm_name)
    try:
        _pin(pong_core)
        size = _ShmRing.nbytes(capacity, payload_size)
        ping = _ShmRing(shm.buf, 0, capacity, payload_size)
        pong = _ShmRing(shm.buf, size, capacity, payload_size)
        counters = np.ndarray((4,), dtype=np.int64, buffer=shm.buf, offset=2 * size)
        expect = 0
        misses = 0
        counters[3] = 1  # ready
        while expect < total:
            got = ping.poll()
            if got is None:
                misses += 1
                if misses > spin:
                    os.sched_yield()
                    misses = 0
                continue
            misses = 0
            seq, payload, ok = got
            if seq < expect:
                counters[1] += 1  # duplicate
            elif seq > expect:
                counters[0] += seq - expect  # lost
            if not ok:
                counters[2] += 1
            expect = seq + 1
            while not pong.post(seq, payload):
                os.sched_yield()
        del ping, pong, counters
    finally:
        shm.close()


def _resolve_pinning(pinning: tuple[int, int] | None) -> tuple[tuple[int, int] | None, bool, str]:
    if pinning is None:
        return None, False, ""
    a, b = pinning
    avail = os.sched_getaffinity(0) if hasattr(os, "sched_getaffinity") else set()
    try:
        if a == b:
            raise PinningUnavailable(f"pin pair {a},{b} names one core")
        if a not in avail or b not in avail:
            raise PinningUnavailable(f"cores {a},{b} not both in host affinity set {sorted(avail)}")
    except PinningUnavailable as exc:
        log.warning("pinning unavailable, running unpinned: %s", exc)
        return None, True, str(exc)
    return (a, b), False, ""


def _live_bench(loops, per_loop, pinning, capacity, payload_size, spin) -> BenchResult:
    if capacity < 2 or capacity & (capacity - 1):
        raise BadCapacity(f"capacity {capacity} is not a power of two >= 2")
    pinned, fallback, why = _resolve_pinning(pinning)
    ncpu = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
    if spin is None:
        # spinning on a single host CPU only burns the peer's timeslice
        spin = 2000 if (pinned is not None or ncpu >= 2) else 0
    total = loops * per_loop
    size = _ShmRing.nbytes(capacity, payload_size)
    shm = shared_memory.SharedMemory(create=True, size=2 * size + 64)
    old_affinity = os.sched_getaffinity(0) if hasattr(os, "sched_getaffinity") else None
    notes = [f"pinning unavailable: {why}"] if fallback else []
    if ncpu < 2:
        notes.append(f"host exposes {ncpu} CPU; endpoints time-share one core")
    try:
        ping = _ShmRing(shm.buf, 0, capacity, payload_size)
        pong = _ShmRing(shm.buf, size, capacity, payload_size)
        counters = np.ndarray((4,), dtype=np.int64, buffer=shm.buf, offset=2 * size)
        counters[:] = 0
        ctx = mp.get_context("spawn")
        proc = ctx.Process(target=_pong_main, args=(
            shm.name, capacity, payload_size, total, pinned[1] if pinned else None, spin))
        proc.start()
        _pin(pinned[0] if pinned else None)
        while counters[3] == 0:
            if not proc.is_alive():
                raise RuntimeError("pong process died during start-up")
            time.sleep(0.001)
        samples = np.zeros(total, dtype=np.int64)
        corrupt = 0
        clock = time.perf_counter_ns
        wall0 = time.monotonic_ns()
        prev = clock()
        for k in range(total):
            payload = _payload(k, payload_size)
            while not ping.post(k, payload):
                os.sched_yield()
            misses = 0
            while (got := pong.poll()) is None:
                misses += 1
                if misses > spin:
                    os.sched_yield()
                    misses = 0
            now = clock()
            samples[k] = now - prev
            prev = now
            seq, echoed, ok = got
            if seq != k or echoed != payload or not ok:
                corrupt += 1
        wall = time.monotonic_ns() - wall0
        proc.join(timeout=30)
        lost, dup, pong_corrupt = int(counters[0]), int(counters[1]), int(counters[2])
        del ping, pong, counters
    finally:
        if old_affinity is not None:
            os.sched_setaffinity(0, old_affinity)
        shm.close()
        shm.unlink()
    return BenchResult("live", loops, per_loop, summarize(samples), samples, wall_ns=wall,
                       pinned=pinned, pinning_fallback=fallback, lost=lost, duplicated=dup,
                       corrupt=corrupt + pong_corrupt, notes=notes)
