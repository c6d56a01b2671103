"""Isolation lifecycle: start (suppress), cooperative tick, stop (restore).

Each core carries a nesting counter. Suppression engages when the counter goes
0 -> 1 and everything is restored when it returns to 0. While isolated, the
core's scheduler tick and real-time bandwidth timers are cancelled, and work
that would have arrived by IPI waits in a per-core FIFO until the application
calls :meth:`Isolator.tick`.
"""
from __future__ import annotations

import enum
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .engine import HrTimer, Simulator, TimerState
from .errors import (
    CrossCoreFree,
    DeferredQueueOverflow,
    DoubleFree,
    EmptyMask,
    NotIsolated,
    UnknownAllocation,
)

if TYPE_CHECKING:
    from .rcu import RcuModel
    from .shmem import Channel


class Mask(enum.Flag):
    CLOCK = 1
    RESCHED = 2
    IPI = 4

    @classmethod
    def parse(cls, text: str) -> "Mask":
        mask = cls(0)
        for part in text.replace(",", "|").split("|"):
            part = part.strip().upper().removeprefix("ISOLATOR_MASK_")
            if part:
                mask |= cls[part]
        return mask

    def __str__(self) -> str:
        names = [m.name for m in Mask if m in self]
        return "|".join(names) if names else "NONE"


class TickWork(str, enum.Enum):
    SCHED = "TICK_SCHED"
    RT = "TICK_RT"
    TSC_SYNC = "TICK_TSC_SYNC"


ALL_TICK_WORK = frozenset(TickWork)


@dataclass
class RtBandwidth:
    id: str
    owner: int
    period: int
    runtime_quota: int
    timer: HrTimer
    deleted: bool = False


@dataclass(frozen=True)
class DeferredItem:
    id: int
    kind: str  # TlbFlush | AccountingTick | QueuedMessageCheck | NoOp
    tag: str | None = None
    source: int | None = None


@dataclass
class TickCosts:
    """Virtual cost in ns of each unit of work done inside isolator_tick."""

    accounting: int = 10
    rt: int = 5
    tsc_sync: int = 5
    flush: int = 5
    message: int = 5


@dataclass
class StartRecord:
    core: int
    mask: Mask
    counter: int
    at: int
    cancelled_timers: list[str] = field(default_factory=list)
    purged_rtb: list[str] = field(default_factory=list)


@dataclass
class TickReport:
    core: int
    at: int
    kinds: frozenset
    items: list[tuple[str, int]] = field(default_factory=list)

    @property
    def cost(self) -> int:
        return sum(c for _, c in self.items)


@dataclass
class StopRecord:
    core: int
    counter: int
    at: int
    restarted_timers: list[str] = field(default_factory=list)
    reinserted_rtb: list[str] = field(default_factory=list)
    drained: list[DeferredItem] = field(default_factory=list)


def sched_timer_id(core: int) -> str:
    return f"sched{core}"


@dataclass
class _CoreIso:
    counter: int = 0
    mask: Mask = Mask(0)
    starts: list[StartRecord] = field(default_factory=list)
    deferred: deque = field(default_factory=deque)
    rtb: list[RtBandwidth] = field(default_factory=list)
    purged: list[tuple[RtBandwidth, bool]] = field(default_factory=list)
    vetoed: list[str] = field(default_factory=list)
    live: set[int] = field(default_factory=set)
    channels: list["Channel"] = field(default_factory=list)
    acct_mark: int = 0
    acct_occupied_mark: int = 0
    accounted_ns: int = 0


class Isolator:
    def __init__(self, sim: Simulator, rcu: "RcuModel | None" = None,
                 costs: TickCosts | None = None, queue_capacity: int = 1024):
        self.sim = sim
        self.rcu = rcu
        self.costs = costs or TickCosts()
        self.queue_capacity = queue_capacity
        self.increments = 0
        self.decrements = 0
        self.enqueued: list[tuple[int, DeferredItem]] = []
        self._state = [_CoreIso() for _ in range(sim.n_cores)]
        self._item_ids = itertools.count(1)
        self._alloc_ids = itertools.count(1)
        self._alloc_owner: dict[int, int] = {}
        self._freed: set[int] = set()
        sim.rearm_filter = self._may_rearm

    # ---- queries ------------------------------------------------------
    def _st(self, core: int) -> _CoreIso:
        self.sim.core(core)
        return self._state[core]

    def counter(self, core: int) -> int:
        return self._st(core).counter

    def is_isolated(self, core: int) -> bool:
        return self._st(core).counter > 0

    def mask(self, core: int) -> Mask:
        return self._st(core).mask

    def isolated_cores(self) -> list[int]:
        return [i for i, s in enumerate(self._state) if s.counter > 0]

    def deferred(self, core: int) -> list[DeferredItem]:
        return list(self._st(core).deferred)

    def rtb_list(self, core: int) -> list[RtBandwidth]:
        return list(self._st(core).rtb)

    def accounted_ns(self, core: int) -> int:
        return self._st(core).accounted_ns

    def _may_rearm(self, timer: HrTimer) -> bool:
        st = self._state[timer.owner]
        if st.counter > 0 and Mask.CLOCK in st.mask:
            # periodic timer stopped by the tickless core; stop() re-arms it
            st.vetoed.append(timer.id)
            return False
        return True

    # ---- setup helpers ------------------------------------------------
    def add_rt_bandwidth(self, core: int, period: int, runtime_quota: int,
                         irq: str | None = "rt_period", start: bool = True) -> RtBandwidth:
        st = self._st(core)
        rid = f"rtb{core}.{len(st.rtb) + len(st.purged)}"
        timer = self.sim.add_timer(rid, core, self.sim.now + period, period, irq=irq, start=start)
        rtb = RtBandwidth(rid, core, period, runtime_quota, timer)
        st.rtb.append(rtb)
        return rtb

    def register_channel(self, core: int, channel: "Channel") -> None:
        """Have isolator_tick poll ``channel`` and run its registered callbacks."""
        self._st(core).channels.append(channel)

    # ---- lifecycle ----------------------------------------------------
    def start(self, core: int, mask: Mask) -> StartRecord:
        st = self._st(core)
        mask = Mask(mask)
        if not mask:
            raise EmptyMask("isolator_start needs at least one mask bit")
        was_isolated = st.counter > 0
        st.counter += 1
        self.increments += 1
        new_bits = mask & ~st.mask if was_isolated else mask
        rec = StartRecord(core, mask, st.counter, self.sim.now)
        if not was_isolated:
            st.acct_mark = self.sim.now
            st.acct_occupied_mark = self.sim.cores[core].occupied_ns
        st.mask |= mask
        if Mask.CLOCK in new_bits:
            if self.stop_sched_timer(core):
                rec.cancelled_timers.append(sched_timer_id(core))
            before = len(st.purged)
            self.purge_rtb(core)
            rec.purged_rtb = [r.id for r, _ in st.purged[before:]]
        if Mask.IPI in new_bits and self.rcu is not None:
            self.rcu.mark_isolated(core)
        st.starts.append(rec)
        self.sim.log(core, "isolator", f"start:{mask}")
        return rec

    def stop_sched_timer(self, core: int) -> bool:
        self._st(core)
        tid = sched_timer_id(core)
        if tid not in self.sim.timers:
            return False
        return self.sim.cancel_timer(tid)

    def purge_rtb(self, core: int) -> int:
        st = self._st(core)
        n = 0
        while st.rtb:
            rtb = st.rtb.pop(0)
            rtb.deleted = True
            was_active = self.sim.cancel_timer(rtb.timer.id)
            st.purged.append((rtb, was_active))
            n += 1
        return n

    def tick(self, core: int, kinds=ALL_TICK_WORK) -> TickReport:
        st = self._st(core)
        if st.counter == 0:
            raise NotIsolated(f"core {core} is not isolated")
        kinds = frozenset(TickWork(k) for k in kinds)
        report = TickReport(core, self.sim.now, kinds)
        if TickWork.SCHED in kinds:
            self.account(core)
            report.items.append(("accounting", self.costs.accounting))
        if TickWork.RT in kinds:
            report.items.append(("rt", self.costs.rt))
        if TickWork.TSC_SYNC in kinds:
            report.items.append(("tsc_sync", self.costs.tsc_sync))
        for item in self._drain(core):
            if item.kind == "TlbFlush":
                report.items.append((f"flush:{item.tag}", self.costs.flush))
            else:
                report.items.append((item.kind, 0))
        for ch in st.channels:
            if not ch.callbacks:
                continue
            while (msg := ch.poll(core)) is not None:
                for cb in ch.callbacks:
                    cb(msg)
                report.items.append((f"message:{ch.id}", self.costs.message))
        self.sim.log(core, "isolator", f"tick:{st.mask}")
        return report

    def stop(self, core: int) -> StopRecord:
        st = self._st(core)
        if st.counter == 0:
            raise NotIsolated(f"core {core} is not isolated")
        st.counter -= 1
        self.decrements += 1
        rec = StopRecord(core, st.counter, self.sim.now)
        if st.counter == 0:
            mask = st.mask
            if Mask.IPI in mask and self.rcu is not None:
                self.rcu.unmark_isolated(core)
            st.mask = Mask(0)
            rec.drained = self._drain(core)
            self.account(core)
            now = self.sim.now
            for start in st.starts:
                for tid in start.cancelled_timers:
                    t = self.sim.timers[tid]
                    self.sim.start_timer(tid, now + (t.period or 0))
                    rec.restarted_timers.append(tid)
            for tid in st.vetoed:
                t = self.sim.timers[tid]
                if t.state is TimerState.ACTIVE:
                    continue
                self.sim.start_timer(tid, now + t.period)
                rec.restarted_timers.append(tid)
            st.vetoed.clear()
            for rtb, was_active in st.purged:
                rtb.deleted = False
                st.rtb.append(rtb)
                if was_active:
                    self.sim.start_timer(rtb.timer.id, now + rtb.period)
                    rec.restarted_timers.append(rtb.timer.id)
                rec.reinserted_rtb.append(rtb.id)
            st.purged.clear()
            st.starts.clear()
            self.sim.log(core, "isolator", f"stop:{mask}")
        else:
            self.sim.log(core, "isolator", f"stop:{st.mask}")
        return rec

    # ---- deferred work ------------------------------------------------
    def defer(self, core: int, kind: str, tag: str | None = None, source: int | None = None) -> DeferredItem:
        st = self._st(core)
        if len(st.deferred) >= self.queue_capacity:
            raise DeferredQueueOverflow(
                f"core {core} deferred queue full ({self.queue_capacity} items)")
        item = DeferredItem(next(self._item_ids), kind, tag, source)
        st.deferred.append(item)
        if kind == "TlbFlush":
            self.sim.cores[core].tlb.enqueue(item.id, tag)
        self.enqueued.append((core, item))
        return item

    def _drain(self, core: int) -> list[DeferredItem]:
        st = self._state[core]
        tlb = self.sim.cores[core].tlb
        done = []
        while st.deferred:
            item = st.deferred.popleft()
            if item.kind == "TlbFlush":
                tlb.apply(item.id)
            elif item.kind == "AccountingTick":
                self.account(core)
            done.append(item)
        return done

    def account(self, core: int) -> int:
        """Charge the time the workload ran since the previous accounting point."""
        st = self._st(core)
        now = self.sim.now
        occupied = self.sim.cores[core].occupied_ns
        delta = (now - st.acct_mark) - (occupied - st.acct_occupied_mark)
        st.accounted_ns += delta
        st.acct_mark = now
        st.acct_occupied_mark = occupied
        return delta

    # ---- per-core arena -----------------------------------------------
    def arena_alloc(self, core: int, size_tag: str = "") -> int:
        st = self._st(core)
        aid = next(self._alloc_ids)
        st.live.add(aid)
        self._alloc_owner[aid] = core
        return aid

    def arena_free(self, core: int, allocation_id: int) -> None:
        st = self._st(core)
        owner = self._alloc_owner.get(allocation_id)
        if owner is None:
            raise UnknownAllocation(f"allocation {allocation_id} was never issued")
        if owner != core:
            raise CrossCoreFree(
                f"allocation {allocation_id} belongs to core {owner}, freed on core {core}")
        if allocation_id in self._freed:
            raise DoubleFree(f"allocation {allocation_id} already freed")
        st.live.discard(allocation_id)
        self._freed.add(allocation_id)

    def arena_live(self, core: int) -> set[int]:
        return set(self._st(core).live)


def active_timer_multiset(sim: Simulator, core: int) -> list[tuple[str, int | None]]:
    return sorted((t.id, t.period) for t in sim.active_timers(core)
                  if t.state is TimerState.ACTIVE)
