"""Grace-period state machine with forced quiescence for isolated cores.

A grace period (GP) waits for every *watched* core to report a quiescent
state. Isolated cores leave the watched set, which is what "permanently
quiescent" means here. Starting a GP needs one step of the GP kthread; that
step can only run on a core in ``gp_kthread_allowed`` that is not monopolised
by a never-yielding workload. With ``fix=True`` isolated cores are removed from
the kthread's allowed set, which avoids starving it.

When constructed without a simulator the model is a pure state machine and the
kthread step is taken explicitly with :meth:`RcuModel.gp_step`; the exhaustive
checker in the tests drives it that way.
"""
from __future__ import annotations

from dataclasses import dataclass

from .engine import EventKind, Simulator
from .errors import NotWatched, UnknownCore, UnwatchedRcuRead


@dataclass
class Waiter:
    caller: str
    gp_awaited: int
    issued_at: int
    done_at: int | None = None

    @property
    def done(self) -> bool:
        return self.done_at is not None


class RcuModel:
    def __init__(self, n_cores: int, sim: Simulator | None = None, fix: bool = True,
                 gp_kthread_allowed=None, gp_step_ns: int = 1000,
                 kernel_context: bool = False):
        self.n_cores = n_cores
        self.sim = sim
        self.fix = fix
        self.gp_step_ns = gp_step_ns
        self.kernel_context = kernel_context
        self.gp_seq = 0
        self.gp_in_flight = False
        self.watched: set[int] = set(range(n_cores))
        self.quiescent: dict[int, bool] = {}
        self.isolated: set[int] = set()
        self.waiters: list[Waiter] = []
        self.completed: list[Waiter] = []
        self.gp_requested = False
        self.stalled_gp: int | None = None
        self._kthread_event = None
        base = range(n_cores) if gp_kthread_allowed is None else gp_kthread_allowed
        self._allowed_base = set(base)

    @property
    def gp_kthread_allowed(self) -> set[int]:
        if self.fix:
            return self._allowed_base - self.isolated
        return set(self._allowed_base)

    def _check(self, core: int) -> None:
        if not 0 <= core < self.n_cores:
            raise UnknownCore(f"core {core} not in [0, {self.n_cores})")

    def _log(self, detail: str, core: int = 0) -> None:
        if self.sim is not None:
            self.sim.log(core, "rcu", detail)

    def _now(self) -> int:
        return self.sim.now if self.sim is not None else 0

    # ---- membership ---------------------------------------------------
    def mark_isolated(self, core: int) -> None:
        self._check(core)
        self.isolated.add(core)
        self.watched.discard(core)
        if self.gp_in_flight:
            self.quiescent.pop(core, None)
            self._maybe_complete()
        self._retry_stalled()

    def unmark_isolated(self, core: int) -> None:
        self._check(core)
        self.isolated.discard(core)
        self.watched.add(core)
        if self.gp_in_flight:
            # a core re-entering mid-GP holds no reader that predates the GP
            self.quiescent[core] = True
        self._retry_stalled()

    # ---- grace periods ------------------------------------------------
    def report_quiescent(self, core: int) -> bool:
        self._check(core)
        if core not in self.watched:
            raise NotWatched(f"core {core} is not watched by RCU")
        if not self.gp_in_flight:
            return False
        self.quiescent[core] = True
        self._log(f"qs:{core}:{self.gp_seq + 1}", core)
        return self._maybe_complete()

    def synchronize_rcu(self, caller: str) -> Waiter:
        """Block ``caller`` until a GP that starts after this call has ended."""
        target = self.gp_seq + (2 if self.gp_in_flight else 1)
        w = Waiter(caller, target, self._now())
        self.waiters.append(w)
        if not self.gp_in_flight:
            self._request_gp()
        return w

    def read_lock(self, core: int) -> None:
        """An RCU read-side section entered on ``core``."""
        self._check(core)
        if self.kernel_context and core in self.isolated:
            raise UnwatchedRcuRead(f"core {core} is outside RCU's watch")

    def gp_step(self) -> bool:
        """One step of the GP kthread: start the requested GP. Returns True if started."""
        if not self.gp_requested or self.gp_in_flight:
            return False
        self.gp_requested = False
        self._kthread_event = None
        self.gp_in_flight = True
        self.quiescent = {c: False for c in self.watched}
        self._log(f"gp_start:{self.gp_seq + 1}")
        self._maybe_complete()
        return True

    def kthread_core(self) -> int | None:
        """Where the GP kthread would run now, or None if it cannot run anywhere."""
        allowed = sorted(self.gp_kthread_allowed)
        if self.fix and not allowed:
            allowed = sorted(set(range(self.n_cores)) - self.isolated)
        for c in allowed:
            if self.sim is None or not self.sim.cores[c].never_yields:
                return c
        return None

    def _request_gp(self) -> None:
        self.gp_requested = True
        if self.sim is None or self._kthread_event is not None:
            return
        core = self.kthread_core()
        if core is None:
            if self.stalled_gp != self.gp_seq + 1:
                self.stalled_gp = self.gp_seq + 1
                self._log(f"stall:{self.gp_seq + 1}")
            return
        self.stalled_gp = None

        def step(ev):
            self._kthread_event = None
            self.gp_step()
            return "gp_kthread"

        self._kthread_event = self.sim.schedule(
            self.sim.now + self.gp_step_ns, core, EventKind.GP, action=step)

    def _retry_stalled(self) -> None:
        if self.gp_requested and not self.gp_in_flight and self._kthread_event is None:
            self._request_gp()

    def _maybe_complete(self) -> bool:
        if not self.gp_in_flight or not all(self.quiescent.get(c, False) for c in self.watched):
            return False
        self.gp_in_flight = False
        self.gp_seq += 1
        self.quiescent = {}
        self._log(f"gp_end:{self.gp_seq}")
        now = self._now()
        still = []
        for w in self.waiters:
            if w.gp_awaited <= self.gp_seq:
                w.done_at = now
                self.completed.append(w)
            else:
                still.append(w)
        self.waiters = still
        if still:
            self._request_gp()
        return True
