"""Deterministic discrete-event engine and virtual multicore hardware.

Time is an integer count of nanoseconds. Events are ordered by ``(at, seq)``
where ``seq`` is a global insertion counter, so simultaneous events run in
the order they were scheduled.
"""
from __future__ import annotations

import csv
import heapq
import io
import itertools
import zlib
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .errors import PastTime, UnknownCore

MAX_TIME_NS = 1 << 62
TRACE_HEADER = ("time_ns", "core", "kind", "detail")


class EventKind(str, Enum):
    TIMER = "timer"
    IPI = "ipi"
    TRIGGER = "trigger"
    WORKLOAD = "workload"
    GP = "gp"


@dataclass(eq=False)
class SimEvent:
    at: int
    seq: int
    target: int
    kind: EventKind
    payload: object = None
    action: Callable[["SimEvent"], str | None] | None = None
    cancelled: bool = False


class TraceRecord(NamedTuple):
    time_ns: int
    core: int
    kind: str
    detail: str


@dataclass(frozen=True)
class CostDist:
    """Handler cost distribution: ``constant:N`` or ``uniform:A:B`` (inclusive)."""

    lo: int
    hi: int

    @classmethod
    def constant(cls, value: int) -> "CostDist":
        return cls(value, value)

    @classmethod
    def parse(cls, text: str | int) -> "CostDist":
        if isinstance(text, int):
            return cls.constant(text)
        parts = str(text).strip().split(":")
        if parts[0] == "constant" and len(parts) == 2:
            return cls.constant(int(parts[1]))
        if parts[0] == "uniform" and len(parts) == 3:
            lo, hi = int(parts[1]), int(parts[2])
            if hi < lo:
                raise ValueError(f"uniform bounds reversed: {text}")
            return cls(lo, hi)
        if len(parts) == 1:
            return cls.constant(int(parts[0]))
        raise ValueError(f"bad cost distribution {text!r}")

    def __post_init__(self):
        if self.lo < 0:
            raise ValueError("costs must be non-negative")

    def __str__(self) -> str:
        if self.lo == self.hi:
            return f"constant:{self.lo}"
        return f"uniform:{self.lo}:{self.hi}"

    def sample(self, rng: np.random.Generator) -> int:
        if self.lo == self.hi:
            return self.lo
        return int(rng.integers(self.lo, self.hi, endpoint=True))


class SimRng:
    """Named random streams derived from one 64-bit seed.

    Every stream is a Philox (counter-based) generator keyed by the seed and
    the CRC-32 of the stream name, so adding draws to one stream never shifts
    the values seen by another.
    """

    def __init__(self, seed: int):
        self.seed = seed & 0xFFFF_FFFF_FFFF_FFFF
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        gen = self._streams.get(name)
        if gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(name.encode()),))
            gen = np.random.Generator(np.random.Philox(ss))
            self._streams[name] = gen
        return gen


class TimerState(str, Enum):
    ACTIVE = "Active"
    CANCELLED = "Cancelled"


@dataclass(eq=False)
class HrTimer:
    id: str
    owner: int
    expiry: int
    period: int | None = None
    irq: str | None = None
    callback: Callable[["HrTimer"], None] | None = None
    state: TimerState = TimerState.CANCELLED
    handle: SimEvent | None = None


@dataclass(frozen=True)
class HandlerRecord:
    core: int
    kind: str
    start: int
    cost: int

    @property
    def end(self) -> int:
        return self.start + self.cost


class TlbModel:
    """Per-core translation cache with a queue of deferred flushes."""

    def __init__(self, owner: int):
        self.owner = owner
        self.valid_entries: set[str] = set()
        self.pending_flushes: deque[tuple[int, str]] = deque()
        self.applied: list[tuple[int, str]] = []
        self.stale_hits: list[tuple[str, int]] = []

    def fill(self, tag: str) -> None:
        self.valid_entries.add(tag)

    def flush(self, tag: str) -> None:
        self.valid_entries.discard(tag)

    def enqueue(self, item_id: int, tag: str) -> None:
        self.pending_flushes.append((item_id, tag))

    def apply(self, item_id: int) -> str:
        for i, (pid, tag) in enumerate(self.pending_flushes):
            if pid == item_id:
                del self.pending_flushes[i]
                self.flush(tag)
                self.applied.append((item_id, tag))
                return tag
        raise KeyError(f"flush {item_id} is not pending on core {self.owner}")

    def access(self, tag: str, now: int = 0) -> bool:
        """Look up a translation; hits on a range awaiting a flush are recorded."""
        hit = tag in self.valid_entries
        if hit and any(t == tag for _, t in self.pending_flushes):
            self.stale_hits.append((tag, now))
        return hit


@dataclass(eq=False)
class Step:
    """A preemptible stretch of workload execution on one core."""

    core: int
    label: str
    begin: int
    end: int
    on_done: Callable[[int], None]
    poll: tuple[int, int] | None = None
    event: SimEvent | None = None
    work_end: int = 0  # end of actual execution, before poll-grid alignment


def next_grid(t: int, granularity: int, phase: int = 0) -> int:
    """Smallest ``phase + k*granularity`` that is >= t."""
    if granularity <= 0:
        return t
    k = -((phase - t) // granularity)
    return phase + k * granularity


@dataclass(eq=False)
class Core:
    index: int
    irq_busy_until: int = 0
    occupied_ns: int = 0
    step: Step | None = None
    masked_irqs: set[str] = field(default_factory=set)
    never_yields: bool = False
    tlb: TlbModel = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.tlb is None:
            self.tlb = TlbModel(self.index)


class Simulator:
    """Event queue, virtual clock, cores, hrtimers and interrupt delivery."""

    def __init__(self, n_cores: int, seed: int = 0,
                 handler_costs: dict[str, CostDist] | None = None):
        if n_cores < 1:
            raise ValueError("need at least one core")
        self.n_cores = n_cores
        self.seed = seed
        self.rng = SimRng(seed)
        self.now = 0
        self.horizon = 0
        self.cores = [Core(i) for i in range(n_cores)]
        self.timers: dict[str, HrTimer] = {}
        self.handler_costs: dict[str, CostDist] = dict(handler_costs or {})
        self.trace: list[TraceRecord] = []
        self.dispatched = 0
        self.interrupt_listeners: list[Callable[[HandlerRecord], None]] = []
        self.mask_listeners: list[Callable[[int, str], None]] = []
        # returns False to veto re-arming a periodic timer after it fires
        self.rearm_filter: Callable[[HrTimer], bool] | None = None
        self._queue: list[tuple[int, int, SimEvent]] = []
        self._seq = itertools.count()

    # ---- queue -------------------------------------------------------
    def core(self, index: int) -> Core:
        if not isinstance(index, (int, np.integer)) or not 0 <= index < self.n_cores:
            raise UnknownCore(f"core {index} not in [0, {self.n_cores})")
        return self.cores[index]

    def schedule(self, at: int, target: int, kind: EventKind, payload=None,
                 action=None) -> SimEvent:
        if at < self.now:
            raise PastTime(f"event at {at} < now {self.now}")
        if at > MAX_TIME_NS:
            raise OverflowError(f"event time {at} exceeds {MAX_TIME_NS}")
        self.core(target)
        ev = SimEvent(at, next(self._seq), target, EventKind(kind), payload, action)
        heapq.heappush(self._queue, (at, ev.seq, ev))
        return ev

    def cancel(self, handle: SimEvent) -> None:
        handle.cancelled = True

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)

    def peek_time(self) -> int | None:
        q = self._queue
        while q and q[0][2].cancelled:
            heapq.heappop(q)
        return q[0][0] if q else None

    def run_until(self, t_end: int) -> list[TraceRecord]:
        """Process every event with ``at <= t_end`` and park the clock at t_end."""
        if t_end < self.now:
            raise PastTime(f"t_end {t_end} < now {self.now}")
        if t_end > MAX_TIME_NS:
            raise OverflowError(f"t_end {t_end} exceeds {MAX_TIME_NS}")
        first = len(self.trace)
        self.horizon = t_end
        q = self._queue
        while q and q[0][0] <= t_end:
            at, _, ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            self.now = at
            self.dispatched += 1
            detail = ev.action(ev) if ev.action is not None else None
            if detail is None:
                detail = "" if ev.payload is None else str(ev.payload)
            self.trace.append(TraceRecord(at, ev.target, ev.kind.value, detail))
        self.now = t_end
        return self.trace[first:]

    def log(self, core: int, kind: str, detail: str, at: int | None = None) -> None:
        self.trace.append(TraceRecord(self.now if at is None else at, core, kind, detail))

    # ---- interrupts and workload steps -------------------------------
    def handler_cost(self, kind: str, core: int) -> int:
        dist = self.handler_costs.get(kind)
        if dist is None and ":" in kind:
            dist = self.handler_costs.get(kind.split(":", 1)[0])
        if dist is None:
            return 0
        return dist.sample(self.rng.stream(f"cost/{kind}/{core}"))

    def deliver_interrupt(self, core: int, kind: str, cost: int | None = None) -> HandlerRecord | None:
        """Run an interrupt handler on ``core``; None when the line is masked."""
        c = self.core(core)
        if kind in c.masked_irqs:
            self.log(core, "irq", f"masked:{kind}")
            for cb in self.mask_listeners:
                cb(core, kind)
            return None
        if cost is None:
            cost = self.handler_cost(kind, core)
        rec = self.occupy(core, kind, cost)
        for cb in self.interrupt_listeners:
            cb(rec)
        return rec

    def occupy(self, core: int, kind: str, cost: int) -> HandlerRecord:
        """Take the core away from its workload for ``cost`` ns (FIFO with handlers)."""
        c = self.core(core)
        start = max(self.now, c.irq_busy_until)
        c.irq_busy_until = start + cost
        c.occupied_ns += cost
        step = c.step
        if cost and step is not None and step.begin <= start < step.end:
            if start < step.work_end:
                step.work_end += cost
            # a poll only resumes once both its work and the handler are done
            end = max(step.work_end, c.irq_busy_until)
            if step.poll is not None:
                end = next_grid(end, *step.poll)
            self._move_step(step, end)
        return HandlerRecord(core, kind, start, cost)

    def run_step(self, core: int, duration: int, on_done: Callable[[int], None],
                 label: str = "step", poll: tuple[int, int] | None = None) -> Step:
        """Start a preemptible workload step; ``poll=(granularity, phase)`` aligns
        its completion to the next poll instant."""
        c = self.core(core)
        if c.step is not None:
            raise RuntimeError(f"core {core} already runs step {c.step.label}")
        begin = max(self.now, c.irq_busy_until)
        end = begin + duration
        if poll is not None:
            end = next_grid(end, *poll)
        step = Step(core, label, begin, end, on_done, poll, work_end=begin + duration)
        c.step = step
        self._move_step(step, end)
        return step

    def _move_step(self, step: Step, end: int) -> None:
        if step.event is not None:
            self.cancel(step.event)
        step.end = end

        def done(ev: SimEvent, step=step):
            self.cores[step.core].step = None
            step.on_done(self.now)
            return step.label

        step.event = self.schedule(end, step.core, EventKind.WORKLOAD, action=done)

    # ---- hrtimers ----------------------------------------------------
    def add_timer(self, timer_id: str, owner: int, expiry: int, period: int | None = None,
                  irq: str | None = None, callback=None, start: bool = True) -> HrTimer:
        self.core(owner)
        if timer_id in self.timers:
            raise ValueError(f"duplicate timer id {timer_id}")
        if period is not None and period <= 0:
            raise ValueError("timer period must be positive")
        t = HrTimer(timer_id, owner, expiry, period, irq, callback)
        self.timers[timer_id] = t
        if start:
            self.start_timer(timer_id, expiry)
        return t

    def start_timer(self, timer_id: str, expiry: int) -> HrTimer:
        t = self.timers[timer_id]
        if t.handle is not None:
            self.cancel(t.handle)
        t.expiry = expiry
        t.state = TimerState.ACTIVE
        t.handle = self.schedule(expiry, t.owner, EventKind.TIMER, action=self._fire)
        t.handle.payload = t
        return t

    def cancel_timer(self, timer_id: str) -> bool:
        t = self.timers[timer_id]
        was_active = t.state is TimerState.ACTIVE
        if t.handle is not None:
            self.cancel(t.handle)
            t.handle = None
        t.state = TimerState.CANCELLED
        return was_active

    def active_timers(self, core: int | None = None) -> list[HrTimer]:
        return [t for t in self.timers.values()
                if t.state is TimerState.ACTIVE and (core is None or t.owner == core)]

    def _fire(self, ev: SimEvent) -> str:
        t: HrTimer = ev.payload  # type: ignore[assignment]
        t.handle = None
        if t.period is None:
            t.state = TimerState.CANCELLED
        if t.irq is not None:
            self.deliver_interrupt(t.owner, t.irq)
        if t.callback is not None:
            t.callback(t)
        if t.period is not None and t.state is TimerState.ACTIVE and t.handle is None:
            if self.rearm_filter is None or self.rearm_filter(t):
                nxt = t.expiry + t.period
                if nxt <= MAX_TIME_NS:
                    self.start_timer(t.id, nxt)
            else:
                t.state = TimerState.CANCELLED
        return f"expire:{t.id}"


def trace_to_csv(records: Iterable[TraceRecord], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    w.writerows(records)
    return buf.getvalue()


def read_trace_csv(text: str) -> list[TraceRecord]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if not rows or tuple(rows[0]) != TRACE_HEADER:
        raise ValueError("not a trace CSV")
    return [TraceRecord(int(r[0]), int(r[1]), r[2], r[3]) for r in rows[1:]]
