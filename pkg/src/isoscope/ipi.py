"""Cross-core interrupt send path with isolation-aware target filtering.

Suppression table (destination isolated):

=============  =================  ==========================================
kind           mask bit needed    outcome
=============  =================  ==========================================
TlbShootdown   IPI                flush deferred, sender completes at once
CpuFreqQuery   IPI                answered from the cached frequency
Reschedule     RESCHED or IPI     no-op deferred item, sender completes
FunctionCall   (never)            IsolationViolation if dst masks IPI
=============  =================  ==========================================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable

from .engine import EventKind, HandlerRecord, Simulator
from .errors import IsolationViolation, SelfIpi
from .isolator import Isolator, Mask


class IpiKind(str, Enum):
    RESCHEDULE = "Reschedule"
    TLB_SHOOTDOWN = "TlbShootdown"
    CPUFREQ_QUERY = "CpuFreqQuery"
    FUNCTION_CALL = "FunctionCall"


@dataclass(eq=False)
class Completion:
    issued_at: int
    done_at: int | None = None

    @property
    def done(self) -> bool:
        return self.done_at is not None


@dataclass
class IpiRequest:
    src: int
    dst: int
    kind: IpiKind
    arg: object = None  # range tag for shootdowns, callback id for function calls
    issued_at: int | None = None
    completion: Completion | None = None

    def __post_init__(self):
        self.kind = IpiKind(self.kind)


@dataclass
class Delivered:
    completion: Completion
    record: HandlerRecord | None = None


@dataclass
class VirtuallyCompleted:
    item_id: int
    completion: Completion


@dataclass
class SuppressedWithCachedValue:
    value: int


IpiOutcome = Delivered | VirtuallyCompleted | SuppressedWithCachedValue


@dataclass
class Broadcast:
    initiator: int
    tag: str
    issued_at: int
    outcomes: dict[int, IpiOutcome] = field(default_factory=dict)

    @property
    def done_at(self) -> int | None:
        """Initiator-side completion: the last delivered handler's end time."""
        t = self.issued_at
        for out in self.outcomes.values():
            c = getattr(out, "completion", None)
            if c is None:
                continue
            if c.done_at is None:
                return None
            t = max(t, c.done_at)
        return t


class IpiFabric:
    def __init__(self, sim: Simulator, isolator: Isolator, wire_delay_ns: int = 0,
                 cached_freq_khz: int = 1_800_000, collector=None):
        self.sim = sim
        self.isolator = isolator
        self.wire_delay_ns = wire_delay_ns
        self.cached_freq_khz = cached_freq_khz
        self.collector = collector
        self.functions: dict[object, Callable[[int, HandlerRecord], None]] = {}

    def _suppression(self, dst: int, kind: IpiKind) -> str | None:
        if not self.isolator.is_isolated(dst):
            return None
        mask = self.isolator.mask(dst)
        if kind is IpiKind.TLB_SHOOTDOWN and Mask.IPI in mask:
            return "defer"
        if kind is IpiKind.CPUFREQ_QUERY and Mask.IPI in mask:
            return "cache"
        if kind is IpiKind.RESCHEDULE and mask & (Mask.RESCHED | Mask.IPI):
            return "noop"
        if kind is IpiKind.FUNCTION_CALL and Mask.IPI in mask:
            return "error"
        return None

    def _label(self, req: IpiRequest) -> str:
        return f"{req.kind.value}:{req.src}->{req.dst}"

    def send_ipi(self, req: IpiRequest) -> IpiOutcome:
        if req.src == req.dst:
            raise SelfIpi(f"core {req.src} cannot IPI itself")
        self.sim.core(req.src)
        self.sim.core(req.dst)
        now = self.sim.now
        req.issued_at = now
        req.completion = Completion(now)
        how = self._suppression(req.dst, req.kind)
        if how == "error":
            raise IsolationViolation(f"{req.kind.value} IPI to isolated core {req.dst}")
        if how == "cache":
            self.sim.log(req.dst, "ipi", f"cached:{self._label(req)}")
            self._count(req.dst, f"{req.kind.value}-blocked")
            return SuppressedWithCachedValue(self.cached_freq_khz)
        if how is not None:
            return self._virtual(req)
        self.sim.log(req.src, "ipi", f"sent:{self._label(req)}")
        self.sim.schedule(now + self.wire_delay_ns, req.dst, EventKind.IPI, req, self._arrive)
        return Delivered(req.completion)

    def _virtual(self, req: IpiRequest, log: bool = True) -> VirtuallyCompleted:
        if req.kind is IpiKind.TLB_SHOOTDOWN:
            item = self.isolator.defer(req.dst, "TlbFlush", str(req.arg), req.src)
        else:
            item = self.isolator.defer(req.dst, "NoOp", None, req.src)
        if log:
            self.sim.log(req.dst, "ipi", f"virtual:{self._label(req)}")
        self._count(req.dst, f"{req.kind.value}-deferred")
        req.completion.done_at = self.sim.now
        return VirtuallyCompleted(item.id, req.completion)

    def _arrive(self, ev) -> str:
        req: IpiRequest = ev.payload
        how = self._suppression(req.dst, req.kind)
        if how == "error":
            raise IsolationViolation(f"{req.kind.value} IPI reached isolated core {req.dst}")
        if how in ("defer", "noop"):
            # isolation began while the IPI was in flight
            self._virtual(req, log=False)
            return f"virtual:{self._label(req)}"
        rec = self.sim.deliver_interrupt(req.dst, f"ipi:{req.kind.value}")
        if rec is None:
            req.completion.done_at = self.sim.now
            return f"masked:{self._label(req)}"
        if req.kind is IpiKind.TLB_SHOOTDOWN:
            self.sim.cores[req.dst].tlb.flush(str(req.arg))
        elif req.kind is IpiKind.FUNCTION_CALL:
            fn = self.functions.get(req.arg)
            if fn is not None:
                fn(req.dst, rec)
        req.completion.done_at = rec.end
        return f"delivered:{self._label(req)}"

    def _count(self, core: int, kind: str) -> None:
        if self.collector is not None:
            self.collector.record(core, kind)

    def tlb_shootdown_broadcast(self, initiator: int, targets: Iterable[int], tag: str) -> Broadcast:
        targets = sorted(set(targets))
        if initiator in targets:
            raise SelfIpi(f"initiator {initiator} listed among targets")
        self.sim.cores[initiator].tlb.flush(tag)
        b = Broadcast(initiator, tag, self.sim.now)
        for dst in targets:
            b.outcomes[dst] = self.send_ipi(IpiRequest(initiator, dst, IpiKind.TLB_SHOOTDOWN, tag))
        return b
