"""The three GPIO experiments as scenario generators on a simulated machine.

A :class:`Machine` bundles the engine, isolator, RCU model, IPI fabric and the
isolation statistics collector, and installs the configured noise sources
(scheduler tick, RT-bandwidth timers, background IPIs, periodic
``synchronize_rcu`` calls).

Busy-polling responders run as preemptible workload steps. Because only queued
events can disturb a core, a run of stimuli that all complete before the next
queued event is resolved in closed form instead of step by step; the result is
identical to the event-by-event path (see ``tests/test_workloads.py``), it just
lets multi-second runs at 2 us periods finish quickly.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .engine import CostDist, EventKind, Simulator, next_grid
from .errors import BadInterval, BadPeriod
from .ipi import IpiFabric, IpiKind, IpiRequest
from .isolator import ALL_TICK_WORK, Isolator, Mask, TickCosts, TickReport, sched_timer_id
from .measure import IsolationStatsCollector, LatencyRecorder, LatencyStats
from .rcu import RcuModel
from .shmem import Channel

IPI_MIX = ((IpiKind.TLB_SHOOTDOWN, 0.6), (IpiKind.RESCHEDULE, 0.3), (IpiKind.CPUFREQ_QUERY, 0.1))
N_RANGES = 16


@dataclass
class NoiseProfile:
    """Interrupt sources applied to every core; all values are scenario inputs."""

    tick_period_ns: int = 0
    tick_cost: CostDist = field(default_factory=lambda: CostDist.constant(0))
    rt_period_ns: int = 0
    rt_cost: CostDist = field(default_factory=lambda: CostDist.constant(0))
    ipi_rate_hz: float = 0.0
    ipi_cost: CostDist = field(default_factory=lambda: CostDist.constant(0))
    irq_entry: CostDist = field(default_factory=lambda: CostDist.constant(0))
    rcu_sync_period_ns: int = 0

    def __post_init__(self):
        for name in ("tick_cost", "rt_cost", "ipi_cost", "irq_entry"):
            value = getattr(self, name)
            if not isinstance(value, CostDist):
                setattr(self, name, CostDist.parse(value))
        if min(self.tick_period_ns, self.rt_period_ns, self.rcu_sync_period_ns) < 0:
            raise ValueError("noise periods must be >= 0")
        if self.ipi_rate_hz < 0:
            raise ValueError("ipi_rate_hz must be >= 0")


class GpioLine:
    def __init__(self, line_id: str, log_limit: int = 10_000):
        self.id = line_id
        self.level = 0
        self.transitions = 0
        self.log: list[tuple[int, int]] = []
        self.log_limit = log_limit

    def set(self, t: int, level: int) -> None:
        if level == self.level:
            return
        self.level = level
        self.transitions += 1
        if len(self.log) < self.log_limit:
            self.log.append((t, level))

    def toggle(self, t: int) -> None:
        self.set(t, 1 - self.level)

    def toggle_many(self, times) -> None:
        n = len(times)
        room = self.log_limit - len(self.log)
        for i in range(min(n, room)):
            self.log.append((int(times[i]), 1 - self.level if i % 2 == 0 else self.level))
        if n % 2:
            self.level = 1 - self.level
        self.transitions += n


class InterruptStatusRegister:
    """Pending bit per line; reading leaves it set, acknowledging clears it."""

    def __init__(self):
        self.pending: set[str] = set()

    def trigger(self, line: str) -> None:
        self.pending.add(line)

    def read(self, line: str) -> bool:
        return line in self.pending

    def acknowledge(self, line: str) -> None:
        self.pending.discard(line)


@dataclass
class IsolationWindow:
    core: int
    mask: Mask
    start_ns: int
    stop_ns: int
    tick_period_ns: int
    kinds: frozenset = ALL_TICK_WORK


class Machine:
    def __init__(self, n_cores: int = 4, seed: int = 0, noise: NoiseProfile | None = None, *,
                 housekeeping: int = 0, rcu_fix: bool = True, kthread_allowed=None,
                 wire_delay_ns: int = 0, queue_capacity: int = 1024,
                 tick_costs: TickCosts | None = None, cached_freq_khz: int = 1_800_000,
                 trace_workload: bool = False, ipi_handler_cost: CostDist | None = None,
                 gp_step_ns: int = 1000, kernel_context: bool = False):
        self.noise = noise or NoiseProfile()
        costs = {"tick": self.noise.tick_cost, "rt_period": self.noise.rt_cost,
                 "ipi": self.noise.ipi_cost}
        if ipi_handler_cost is not None:
            costs["ipi:FunctionCall"] = ipi_handler_cost
        self.sim = Simulator(n_cores, seed, costs)
        self.housekeeping = housekeeping
        self.trace_workload = trace_workload
        self.collector = IsolationStatsCollector()
        self.sim.mask_listeners.append(lambda core, kind: self.collector.record(core, f"{kind}-masked"))
        self.rcu = RcuModel(n_cores, self.sim, fix=rcu_fix, gp_kthread_allowed=kthread_allowed,
                            gp_step_ns=gp_step_ns, kernel_context=kernel_context)
        self.isolator = Isolator(self.sim, self.rcu, tick_costs, queue_capacity)
        self.fabric = IpiFabric(self.sim, self.isolator, wire_delay_ns, cached_freq_khz, self.collector)
        self.windows: list[IsolationWindow] = []
        self.tick_reports: list[TickReport] = []
        self.rcu_waiters = []
        self.samples: LatencyRecorder | None = None
        self._tick_events: dict[int, object] = {}  # id(window) -> next tick event

    @property
    def n_cores(self) -> int:
        return self.sim.n_cores

    # ---- noise --------------------------------------------------------
    def install_noise(self, cores: Iterable[int] | None = None) -> None:
        noise = self.noise
        cores = list(range(self.n_cores)) if cores is None else list(cores)
        for c in cores:
            for r in range(N_RANGES):
                self.sim.cores[c].tlb.fill(f"r{r}")
            if noise.tick_period_ns:
                self.sim.add_timer(sched_timer_id(c), c, noise.tick_period_ns, noise.tick_period_ns,
                                   irq="tick", callback=self._sched_tick)
            if noise.rt_period_ns:
                self.isolator.add_rt_bandwidth(c, noise.rt_period_ns, noise.rt_period_ns * 95 // 100)
        if noise.ipi_rate_hz > 0 and self.n_cores > 1:
            self._schedule_background_ipi()
        if noise.rcu_sync_period_ns:
            self.sim.schedule(noise.rcu_sync_period_ns, self.housekeeping, EventKind.WORKLOAD,
                              action=self._rcu_sync)

    def _sched_tick(self, timer) -> None:
        core = timer.owner
        self.isolator.account(core)
        if core in self.rcu.watched:
            self.rcu.report_quiescent(core)

    def _schedule_background_ipi(self) -> None:
        rng = self.sim.rng.stream("noise/ipi")
        gap = max(1, int(round(rng.exponential(1e9 / self.noise.ipi_rate_hz))))
        self.sim.schedule(self.sim.now + gap, self.housekeeping, EventKind.WORKLOAD,
                          action=self._background_ipi)

    def _background_ipi(self, ev) -> str:
        rng = self.sim.rng.stream("noise/ipi")
        r = rng.random()
        acc = 0.0
        kind = IPI_MIX[-1][0]
        for k, w in IPI_MIX:
            acc += w
            if r < acc:
                kind = k
                break
        others = [c for c in range(self.n_cores) if c != self.housekeeping]
        dst = others[int(rng.integers(len(others)))]
        tag = f"r{int(rng.integers(N_RANGES))}"
        self.fabric.send_ipi(IpiRequest(self.housekeeping, dst, kind, tag))
        self._schedule_background_ipi()
        return f"bg_ipi:{kind.value}"

    def _rcu_sync(self, ev) -> str:
        self.rcu_waiters.append(self.rcu.synchronize_rcu(f"hk@{self.sim.now}"))
        self.sim.schedule(self.sim.now + self.noise.rcu_sync_period_ns, self.housekeeping,
                          EventKind.WORKLOAD, action=self._rcu_sync)
        return "synchronize_rcu"

    # ---- isolation windows --------------------------------------------
    def add_isolation(self, core: int, mask: Mask, start_ns: int, stop_ns: int | None,
                      tick_period_ns: int, kinds=ALL_TICK_WORK) -> IsolationWindow:
        if tick_period_ns <= 0:
            raise ValueError("isolator tick period must be positive")
        w = IsolationWindow(core, Mask(mask), start_ns, stop_ns, tick_period_ns, frozenset(kinds))
        self.windows.append(w)
        self.sim.schedule(start_ns, core, EventKind.WORKLOAD, w, self._iso_start)
        if stop_ns is not None:
            self.sim.schedule(stop_ns, core, EventKind.WORKLOAD, w, self._iso_stop)
        return w

    def _iso_start(self, ev) -> str:
        w: IsolationWindow = ev.payload
        self.isolator.start(w.core, w.mask)
        self.sim.cores[w.core].never_yields = True
        self._tick_events[id(w)] = self.sim.schedule(
            self.sim.now + w.tick_period_ns, w.core, EventKind.WORKLOAD, w, self._iso_tick)
        return "isolator_start"

    def _iso_tick(self, ev) -> str:
        w: IsolationWindow = ev.payload
        # kernel-context workloads walk RCU-protected data on every pass
        self.rcu.read_lock(w.core)
        report = self.isolator.tick(w.core, w.kinds)
        if report.cost:
            self.sim.occupy(w.core, "isolator_tick", report.cost)
        self.tick_reports.append(report)
        self._tick_events[id(w)] = self.sim.schedule(
            self.sim.now + w.tick_period_ns, w.core, EventKind.WORKLOAD, w, self._iso_tick)
        return "isolator_tick"

    def _iso_stop(self, ev) -> str:
        w: IsolationWindow = ev.payload
        handle = self._tick_events.pop(id(w), None)
        if handle is not None:
            self.sim.cancel(handle)
        self.isolator.stop(w.core)
        if not self.isolator.is_isolated(w.core):
            self.sim.cores[w.core].never_yields = False
        return "isolator_stop"

    def finish(self) -> None:
        """Close any isolation window still open at the end of the run."""
        for handle in self._tick_events.values():
            self.sim.cancel(handle)
        self._tick_events.clear()
        for c in self.isolator.isolated_cores():
            while self.isolator.is_isolated(c):
                self.isolator.stop(c)
            self.sim.cores[c].never_yields = False

    def stalled_waiters(self, older_than_ns: int) -> list:
        now = self.sim.now
        return [w for w in self.rcu.waiters if now - w.issued_at > older_than_ns]


class StimulusTrain:
    """Periodic stimuli: stimulus k happens at ``first + k*period`` and becomes
    visible to the responder ``delay`` ns later."""

    def __init__(self, first: int, period: int, count: int, delay: int = 0):
        self.first = first
        self.period = period
        self.count = count
        self.delay = delay

    def at(self, k: int) -> int:
        return self.first + k * self.period


class PolledResponder:
    """A never-yielding loop on ``core`` that polls every ``granularity`` ns
    (phase ``phase``), then spends ``cost`` ns responding.

    ``on_visible(k, t)`` runs when stimulus k becomes visible, ``on_detect(k, t)``
    when the poll sees it and ``on_done(k, t)`` when the response completes.
    A sample of ``done - stimulus`` is recorded per stimulus. Responders with
    none of those hooks may pass ``on_batch(visible, detect, done)`` arrays
    instead, which lets whole runs of stimuli be resolved with numpy.
    """

    def __init__(self, machine: Machine, core: int, train: StimulusTrain, granularity: int,
                 cost: int, recorder: LatencyRecorder, phase: int = 0,
                 on_visible: Callable[[int, int], None] | None = None,
                 on_detect: Callable[[int, int], None] | None = None,
                 on_done: Callable[[int, int], None] | None = None,
                 on_batch: Callable[[np.ndarray, np.ndarray, np.ndarray], None] | None = None,
                 fast: bool = True):
        self.m = machine
        self.sim = machine.sim
        self.core = core
        self.train = train
        self.granularity = granularity
        self.phase = phase
        self.cost = cost
        self.recorder = recorder
        self.on_visible = on_visible
        self.on_detect = on_detect
        self.on_done = on_done
        self.on_batch = on_batch
        self.fast = fast and not machine.trace_workload
        self.next_k = 0
        self.free_at = 0
        self.active: int | None = None
        self.waiting: deque[int] = deque()
        self.fast_count = 0
        self._detected_at = 0

    def start(self) -> None:
        if self.train.count > 0:
            self._schedule_train(0)

    def _schedule_train(self, k: int) -> None:
        t = self.train.at(k) + self.train.delay
        self.sim.schedule(t, self.core, EventKind.TRIGGER, k, self._on_train)

    def _on_train(self, ev) -> str:
        k0 = ev.payload
        sim = self.sim
        train = self.train
        n = train.count
        core = sim.cores[self.core]
        k = k0
        if self.fast:
            boundary = sim.peek_time()
            limit = sim.horizon if boundary is None else min(sim.horizon, boundary - 1)
            if self.on_visible is None and self.on_detect is None and self.on_done is None:
                k = self._fast_vector(k, limit)
            k = self._fast_scalar(k, limit)
            self.fast_count += k - k0
        if k < n:
            v = train.at(k) + train.delay
            if v <= sim.now:
                self._visible(k)
                k += 1
            if k < n:
                self._schedule_train(k)
        return f"train:{k0}+{k - k0}" if k - k0 != 1 else f"stimulus:{k0}"

    def _fast_scalar(self, k: int, limit: int) -> int:
        """Resolve stimuli one at a time while each completes before ``limit``."""
        train, core = self.train, self.sim.cores[self.core]
        g, ph, cost = self.granularity, self.phase, self.cost
        first, period, delay, n = train.first, train.period, train.delay, train.count
        rec = self.recorder.samples
        on_visible, on_detect, on_done = self.on_visible, self.on_detect, self.on_done
        batch = [] if self.on_batch is not None else None
        while k < n and self.active is None:
            s = first + k * period
            v = s + delay
            if v > limit:
                break
            t = v if v > self.free_at else self.free_at
            if core.irq_busy_until > t:
                t = core.irq_busy_until
            if g > 0:
                t = ph - ((ph - t) // g) * g
            end = t + cost
            if end > limit:
                break
            if on_visible is not None:
                on_visible(k, v)
            if on_detect is not None:
                on_detect(k, t)
            if on_done is not None:
                on_done(k, end)
            if batch is not None:
                batch.append((v, t, end))
            rec.append(end - s)
            self.free_at = end
            k += 1
        if batch:
            self.on_batch(*np.array(batch, dtype=np.int64).T)
        return k

    def _fast_vector(self, k: int, limit: int) -> int:
        """numpy version of :meth:`_fast_scalar` for hook-free responders; leaves
        anything it cannot resolve in bulk to the scalar loop."""
        train = self.train
        span = limit - train.delay - train.first
        if self.active is not None or span < 0:
            return k
        kmax = min(train.count, span // train.period + 1)
        if kmax - k < 8:
            return k
        ks = np.arange(k, kmax, dtype=np.int64)
        s = train.first + ks * train.period
        t = s + train.delay
        t[0] = max(t[0], self.free_at, self.sim.cores[self.core].irq_busy_until)
        g = self.granularity
        if g > 0:
            t = self.phase - ((self.phase - t) // g) * g
        end = t + self.cost
        # stimuli must not queue behind the previous response for the bulk path
        if len(end) > 1 and np.any(end[:-1] > s[1:] + train.delay):
            return k
        m = int(np.searchsorted(end, limit, side="right"))
        if m == 0:
            return k
        self.recorder.samples.frombytes((end[:m] - s[:m]).tobytes())
        if self.on_batch is not None:
            self.on_batch(s[:m] + train.delay, t[:m], end[:m])
        self.free_at = int(end[m - 1])
        return k + m

    # ---- event-by-event path -----------------------------------------
    def _visible(self, k: int) -> None:
        if self.on_visible is not None:
            self.on_visible(k, self.sim.now)
        if self.active is not None or self.waiting:
            self.waiting.append(k)
            return
        self._begin(k)

    def _begin(self, k: int) -> None:
        self.active = k
        begin_floor = max(self.sim.now, self.free_at)
        if begin_floor > self.sim.now:
            # previous response still running in closed form; wait for it
            self.sim.schedule(begin_floor, self.core, EventKind.WORKLOAD, k,
                              lambda ev: (self._poll(ev.payload), f"resume:{ev.payload}")[1])
            return
        self._poll(k)

    def _poll(self, k: int) -> None:
        self.sim.run_step(self.core, 0, lambda t: self._detected(k, t), label=f"poll:{k}",
                          poll=(self.granularity, self.phase) if self.granularity > 0 else None)

    def _detected(self, k: int, t: int) -> None:
        self._detected_at = t
        if self.on_detect is not None:
            self.on_detect(k, t)
        self.sim.run_step(self.core, self.cost, lambda t2: self._finish(k, t2), label=f"respond:{k}")

    def _finish(self, k: int, t: int) -> None:
        if self.on_done is not None:
            self.on_done(k, t)
        if self.on_batch is not None:
            self.on_batch(np.array([self.train.at(k) + self.train.delay]),
                          np.array([self._detected_at]), np.array([t]))
        self.recorder.add(t - self.train.at(k))
        self.free_at = t
        self.active = None
        if self.waiting:
            self._begin(self.waiting.popleft())


def _build_machine(machine: Machine | None, noise: NoiseProfile | None, n_cores: int,
                   seed: int) -> Machine:
    if machine is not None:
        return machine
    m = Machine(n_cores, seed, noise)
    m.install_noise()
    return m


def _finish_run(m: Machine, t_end: int, recorder: LatencyRecorder) -> LatencyStats:
    m.sim.run_until(t_end)
    m.finish()
    m.samples = recorder
    return recorder.stats()


def run_gpio_response(period: int, n_triggers: int, isolated: bool,
                      noise: NoiseProfile | None = None, poll_granularity: int = 40,
                      response_cost: int = 390, *, machine: Machine | None = None,
                      core: int = 2, n_cores: int = 4, seed: int = 0,
                      mask: Mask = Mask.CLOCK | Mask.IPI, tick_period_ns: int = 1_000_000,
                      first_ns: int = 0, poll_phase: int = 0, drain_ns: int = 1_000_000,
                      t_end: int | None = None) -> LatencyStats:
    """External trigger -> output edge latency on ``core``.

    Isolated: the core's GPIO interrupt is disabled and a busy loop polls the
    interrupt status register. Baseline: the trigger raises an interrupt whose
    handler (entry cost from ``noise.irq_entry`` plus ``response_cost``) drives
    the output.
    """
    if period <= 0:
        raise BadPeriod(f"period {period} must be positive")
    if n_triggers < 1:
        raise ValueError("n_triggers must be >= 1")
    m = _build_machine(machine, noise, n_cores, seed)
    sim = m.sim
    rec = LatencyRecorder()
    train = StimulusTrain(first_ns, period, n_triggers)
    gpio_in, gpio_out = GpioLine("gpio_in"), GpioLine("gpio_out")
    isr = InterruptStatusRegister()
    last = first_ns + (n_triggers - 1) * period
    horizon = t_end if t_end is not None else last + drain_ns

    if isolated:
        if not m.windows:
            m.add_isolation(core, mask, 0, None, tick_period_ns)

        def visible(k, t):
            gpio_in.toggle(t)
            isr.trigger("gpio_in")

        def detect(k, t):
            isr.acknowledge("gpio_in")

        def done(k, t):
            gpio_out.toggle(t)
            if m.trace_workload:
                sim.log(core, "gpio", f"out:{k}", at=t)

        def batch(visible_t, detect_t, done_t):
            # the status bit is set and acknowledged inside every stimulus
            gpio_in.toggle_many(visible_t)
            gpio_out.toggle_many(done_t)

        if m.trace_workload:
            PolledResponder(m, core, train, poll_granularity, response_cost, rec, poll_phase,
                            visible, detect, done).start()
        else:
            PolledResponder(m, core, train, poll_granularity, response_cost, rec, poll_phase,
                            on_batch=batch).start()
    else:
        entry_rng = sim.rng.stream(f"gpio/entry/{core}")

        def out(ev):
            k = ev.payload
            gpio_out.toggle(sim.now)
            rec.add(sim.now - train.at(k))
            return f"gpio_out:{k}"

        def trigger(ev):
            k = ev.payload
            gpio_in.toggle(sim.now)
            isr.trigger("gpio_in")
            cost = m.noise.irq_entry.sample(entry_rng) + response_cost
            r = sim.deliver_interrupt(core, "gpio", cost)
            if r is not None:
                isr.acknowledge("gpio_in")
                sim.schedule(r.end, core, EventKind.WORKLOAD, k, out)
            if k + 1 < n_triggers:
                sim.schedule(train.at(k + 1), core, EventKind.TRIGGER, k + 1, trigger)
            return f"gpio_in:{k}"

        sim.schedule(first_ns, core, EventKind.TRIGGER, 0, trigger)
    m.gpio = (gpio_in, gpio_out)
    return _finish_run(m, horizon, rec)


def run_counter_toggle(interval: int, duration: int, isolated: bool,
                       noise: NoiseProfile | None = None, read_granularity: int = 40, *,
                       machine: Machine | None = None, core: int = 2, n_cores: int = 4,
                       seed: int = 0, mask: Mask = Mask.CLOCK | Mask.IPI,
                       tick_period_ns: int = 1_000_000, read_phase: int = 0,
                       drain_ns: int = 1_000_000) -> LatencyStats:
    """Deviation of each GPIO edge from the ideal ``k*interval`` grid when a loop
    on ``core`` reads the timestamp counter and flips the pin."""
    if interval <= 0:
        raise BadInterval(f"interval {interval} must be positive")
    n_edges = duration // interval
    if n_edges < 1:
        raise BadInterval(f"duration {duration} shorter than one interval {interval}")
    m = _build_machine(machine, noise, n_cores, seed)
    if isolated and not m.windows:
        m.add_isolation(core, mask, 0, None, tick_period_ns)
    rec = LatencyRecorder()
    pin = GpioLine("gpio_out")
    train = StimulusTrain(interval, interval, n_edges)
    PolledResponder(m, core, train, read_granularity, 0, rec, read_phase,
                    on_batch=lambda v, d, e: pin.toggle_many(e)).start()
    m.gpio = (pin,)
    return _finish_run(m, train.at(n_edges - 1) + drain_ns, rec)


def run_cross_core(isolated: bool, n_rounds: int, noise: NoiseProfile | None = None, *,
                   period: int = 2000, hop_delay_ns: int = 100, poll_granularity: int = 40,
                   machine: Machine | None = None, core_a: int = 1, core_b: int = 2,
                   n_cores: int = 4, seed: int = 0, mask: Mask = Mask.CLOCK | Mask.IPI,
                   tick_period_ns: int = 1_000_000, capacity: int = 64,
                   drain_ns: int = 1_000_000) -> LatencyStats:
    """GPIO1 on core A to GPIO2 on core B.

    Baseline: A sends a FunctionCall IPI and B's handler raises GPIO2 at its end
    (wire delay and handler cost come from the machine). Isolated: A posts on a
    shared-memory channel that B busy-polls.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be >= 1")
    if core_a == core_b:
        raise ValueError("cross-core test needs two distinct cores")
    if period <= 0:
        raise BadPeriod(f"period {period} must be positive")
    m = _build_machine(machine, noise, n_cores, seed)
    sim = m.sim
    rec = LatencyRecorder()
    gpio1, gpio2 = GpioLine("gpio1"), GpioLine("gpio2")
    train = StimulusTrain(0, period, n_rounds, delay=hop_delay_ns if isolated else 0)
    last = train.at(n_rounds - 1)

    if isolated:
        if not m.windows:
            m.add_isolation(core_b, mask, 0, None, tick_period_ns)
        ch = Channel(capacity, core_a, core_b, channel_id="a->b")
        m.channel = ch

        def visible(k, t):
            s = train.at(k)
            gpio1.toggle(s)
            ch.post(core_a, k.to_bytes(8, "little"), at=s)

        def detect(k, t):
            msg = ch.poll(core_b)
            assert msg is not None and int.from_bytes(msg.payload, "little") == k

        PolledResponder(m, core_b, train, poll_granularity, 0, rec, 0, visible, detect,
                        lambda k, t: gpio2.toggle(t)).start()
    else:
        def raise_gpio2(ev):
            k = ev.payload
            gpio2.toggle(sim.now)
            rec.add(sim.now - train.at(k))
            return f"gpio2:{k}"

        def handler(dst, r):
            sim.schedule(r.end, dst, EventKind.WORKLOAD, pending.popleft(), raise_gpio2)

        pending: deque[int] = deque()
        m.fabric.functions["gpio2"] = handler

        def round_(ev):
            k = ev.payload
            gpio1.toggle(sim.now)
            pending.append(k)
            m.fabric.send_ipi(IpiRequest(core_a, core_b, IpiKind.FUNCTION_CALL, "gpio2"))
            if k + 1 < n_rounds:
                sim.schedule(train.at(k + 1), core_a, EventKind.TRIGGER, k + 1, round_)
            return f"gpio1:{k}"

        sim.schedule(0, core_a, EventKind.TRIGGER, 0, round_)
    m.gpio = (gpio1, gpio2)
    return _finish_run(m, last + hop_delay_ns + drain_ns, rec)
