"""Run orchestration, report bundles and run comparison.

A run directory holds::

    scenario.scn     canonical write-back of the scenario that ran
    trace.csv        time_ns,core,kind,detail
    stats.csv        scenario,mode,count,min_ns,max_ns,jitter_ns
    persistence.csv  bucket_lo_ns,bucket_hi_ns,count
    collector.csv    core,kind,count
    persistence.png  latency histogram rendered from persistence.csv
    summary.txt      scenario echo, seed, hash, versions, diagnostics
    bench.csv, bench_hist.csv   (ipc_bench only)

Every CSV starts with ``# scenario=<name> seed=<seed> hash=<hash>``.
"""
from __future__ import annotations

import csv
import io
import platform
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .engine import Simulator, trace_to_csv
from .errors import IsoscopeError, MissingRun, RcuStall, ScenarioError
from .measure import (
    BUCKET_EDGES,
    LatencyStats,
    persistence_csv,
    read_csv_rows,
    stats_csv,
    trace_derived_counts,
)
from .scenario import Scenario, dumps, header_comment, loads, parse_pin, scenario_hash
from .shmem import BenchResult, round_trip_bench
from .workloads import Machine, run_counter_toggle, run_cross_core, run_gpio_response

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SCENARIO = 3
EXIT_IO = 4

BENCH_HEADER = ("mode", "loops", "roundtrips", "count", "min_ns", "max_ns", "jitter_ns")
COMPARE_HEADER = ("Configuration", "Period", "Min Lat", "Max Lat", "Duration")

# Hardware measurements the simulated runs are annotated against (never asserted):
# (period_ns, min_ns, max_ns) per workload and mode.
HARDWARE_REFERENCE = {
    ("gpio_response", "isolated"): (2000, 390, 470),
    ("gpio_response", "baseline"): (200000, 4100, 72000),
    ("counter_toggle", "isolated"): (2000, 0, 40),
    ("counter_toggle", "baseline"): (200000, 0, 8000),
    ("cross_core", "isolated"): (2000, 120, 160),
    ("cross_core", "baseline"): (200000, 1040, 2200),
    ("ipc_bench", "baseline"): (0, 200, 300),
}


def versions() -> dict[str, str]:
    out = {"python": platform.python_version()}
    for pkg in ("artifact", "numpy", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    return out


@dataclass
class RunOutcome:
    scenario: Scenario
    status: int = EXIT_OK
    error: str | None = None
    stats: LatencyStats | None = None
    machine: Machine | None = None
    bench: BenchResult | None = None
    trace: list = field(default_factory=list)
    collector_rows: list = field(default_factory=list)
    collector_exact: bool = True
    rcu_note: str = ""
    files: dict[str, Path] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == EXIT_OK


def build_machine(sc: Scenario) -> Machine:
    m = Machine(sc.n_cores, sc.seed, sc.noise, rcu_fix=sc.rcu.fix,
                kthread_allowed=sc.rcu.kthread_allowed, wire_delay_ns=sc.ipi.wire_delay_ns,
                queue_capacity=sc.ipi.queue_capacity, tick_costs=sc.tick_costs,
                cached_freq_khz=sc.ipi.cached_freq_khz, trace_workload=sc.trace_workload,
                ipi_handler_cost=sc.ipi.handler_cost, gp_step_ns=sc.rcu.gp_step_ns,
                kernel_context=sc.rcu.kernel_context)
    m.install_noise()
    for w in sc.isolation:
        m.add_isolation(w.core, w.mask, w.start_ns, w.stop_ns, w.tick_period_ns, w.kinds)
    return m


def execute(sc: Scenario) -> RunOutcome:
    """Run the scenario in memory. Scenario errors are captured, not raised."""
    out = RunOutcome(sc)
    p = sc.params
    if sc.workload == "ipc_bench":
        sim = Simulator(2, sc.seed)
        pin = parse_pin(p["pin"]) if p["pin"] else None
        try:
            out.bench = round_trip_bench(p["mode"], p["loops"], p["roundtrips"], pin,
                                         hop_delay_ns=p["hop_delay_ns"],
                                         poll_granularity_ns=p["poll_granularity_ns"],
                                         seed=sc.seed, capacity=sc.channel.capacity,
                                         payload_size=sc.channel.max_payload, sim=sim)
        except IsoscopeError as exc:
            out.status, out.error = EXIT_SCENARIO, f"{type(exc).__name__}: {exc}"
            return out
        out.stats = out.bench.stats
        out.trace = sim.trace
        b = out.bench
        if b.lost or b.duplicated or b.corrupt:
            out.status = EXIT_SCENARIO
            out.error = f"bench lost={b.lost} duplicated={b.duplicated} corrupt={b.corrupt}"
        return out

    m = build_machine(sc)
    out.machine = m
    try:
        if sc.workload == "gpio_response":
            out.stats = run_gpio_response(
                p["period_ns"], sc.duration_ns // p["period_ns"], bool(sc.isolation),
                poll_granularity=p["poll_granularity_ns"], response_cost=p["response_cost_ns"],
                machine=m, core=p["core"], first_ns=p["first_ns"], poll_phase=p["poll_phase_ns"],
                t_end=sc.duration_ns + sc.drain_ns)
        elif sc.workload == "counter_toggle":
            out.stats = run_counter_toggle(
                p["interval_ns"], sc.duration_ns, bool(sc.isolation),
                read_granularity=p["read_granularity_ns"], machine=m, core=p["core"],
                read_phase=p["read_phase_ns"], drain_ns=sc.drain_ns)
        else:
            out.stats = run_cross_core(
                bool(sc.isolation), sc.duration_ns // p["period_ns"], period=p["period_ns"],
                hop_delay_ns=p["hop_delay_ns"], poll_granularity=p["poll_granularity_ns"],
                machine=m, core_a=p["core_a"], core_b=p["core_b"],
                capacity=sc.channel.capacity, drain_ns=sc.drain_ns)
        _check_rcu(sc, m, out)
    except ScenarioError as exc:
        out.status, out.error = EXIT_SCENARIO, f"{type(exc).__name__}: {exc}"
    except IsoscopeError as exc:
        # workload-level errors that slipped past validation
        out.status, out.error = EXIT_SCENARIO, f"{type(exc).__name__}: {exc}"
    out.trace = m.sim.trace
    out.collector_rows = m.collector.rows()
    derived = trace_derived_counts(out.trace)
    out.collector_exact = dict(m.collector.counts) == {k: v for k, v in derived.items() if v}
    if not out.collector_exact and out.status == EXIT_OK:
        out.status, out.error = EXIT_SCENARIO, "collector counts disagree with the trace"
    return out


def _check_rcu(sc: Scenario, m: Machine, out: RunOutcome) -> None:
    stalled = m.stalled_waiters(sc.rcu.stall_ns)
    done = len(m.rcu.completed)
    out.rcu_note = (f"grace periods completed={m.rcu.gp_seq} waiters released={done} "
                    f"pending={len(m.rcu.waiters)} stalled={len(stalled)}")
    if stalled:
        oldest = min(w.issued_at for w in stalled)
        msg = (f"synchronize_rcu issued at {oldest} ns still waiting at {m.sim.now} ns "
               f"(fix {'enabled' if sc.rcu.fix else 'disabled'})")
        if sc.rcu.fix:
            raise RcuStall(msg)
        out.rcu_note += f"; stall reproduced: {msg}"


def isolated_core_events(trace, core: int) -> dict[str, int]:
    """Timer expiries and IPI arrivals the trace attributes to ``core``."""
    timers = ipis = 0
    for rec in trace:
        if int(rec[1]) != core:
            continue
        if rec[2] == "timer" and rec[3].startswith("expire:"):
            timers += 1
        elif rec[2] == "ipi" and rec[3].startswith(("delivered:", "masked:")):
            ipis += 1
    return {"timer_expiry": timers, "ipi_arrival": ipis}


# ---- files ------------------------------------------------------------------------

def _bench_csv(b: BenchResult, comment: str) -> str:
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_HEADER)
    st = b.stats
    w.writerow((b.mode, b.loops, b.roundtrips, st.count, st.min_ns, st.max_ns, st.jitter_ns))
    return buf.getvalue()


def write_bench(b: BenchResult, out_dir, comment: str) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {"bench": out_dir / "bench.csv", "bench_hist": out_dir / "bench_hist.csv"}
    files["bench"].write_text(_bench_csv(b, comment), encoding="utf-8")
    files["bench_hist"].write_text(persistence_csv(b.stats, comment), encoding="utf-8")
    return files


def plot_persistence(stats: LatencyStats, path, title: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    hist = np.asarray(stats.histogram)
    nz = np.nonzero(hist)[0]
    lo_i, hi_i = max(int(nz[0]) - 2, 0), min(int(nz[-1]) + 3, len(hist))
    lo = np.maximum(BUCKET_EDGES[lo_i:hi_i], 0.5)
    hi = BUCKET_EDGES[lo_i + 1:hi_i + 1]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(lo, hist[lo_i:hi_i], width=hi - lo, align="edge", color="#2a6f97", edgecolor="black",
           linewidth=0.4)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.axvline(max(stats.min_ns, 0.5), color="green", linestyle="--", label=f"min {stats.min_ns} ns")
    ax.axvline(max(stats.max_ns, 0.5), color="red", linestyle="--", label=f"max {stats.max_ns} ns")
    ax.set_xlabel("latency (ns)")
    ax.set_ylabel("samples")
    ax.set_title(title)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _summary(out: RunOutcome) -> str:
    sc = out.scenario
    lines = [f"isoscope run: {sc.name}",
             f"workload: {sc.workload} ({sc.mode})",
             f"seed: {sc.seed}",
             f"hash: {scenario_hash(sc)}",
             "versions: " + " ".join(f"{k}={v}" for k, v in versions().items()),
             f"status: {'ok' if out.ok else 'error'} (exit {out.status})"]
    if out.error:
        lines.append(f"diagnostic: {out.error}")
    st = out.stats
    if st is not None:
        lines.append(f"samples: count={st.count} min_ns={st.min_ns} max_ns={st.max_ns} "
                     f"jitter_ns={st.jitter_ns} mean_ns={st.mean_ns:.1f}")
    ref = HARDWARE_REFERENCE.get((sc.workload, sc.mode))
    if ref is not None:
        lines.append(f"hardware reference (annotation only): period {ref[0]} ns, "
                     f"min {ref[1]} ns, max {ref[2]} ns, jitter {ref[2] - ref[1]} ns")
    if out.bench is not None:
        b = out.bench
        lines.append(f"bench: mode={b.mode} wall_ns={b.wall_ns} pinned={b.pinned} "
                     f"pinning_fallback={b.pinning_fallback} lost={b.lost} "
                     f"duplicated={b.duplicated} corrupt={b.corrupt}")
        lines += [f"note: {n}" for n in b.notes]
    if out.machine is not None:
        lines.append(f"collector: {sum(n for *_, n in out.collector_rows)} blocked/deferred, "
                     f"trace cross-check {'exact' if out.collector_exact else 'MISMATCH'}")
        for w in sc.isolation:
            ev = isolated_core_events(out.trace, w.core)
            lines.append(f"isolated core {w.core}: timer_expiry={ev['timer_expiry']} "
                         f"ipi_arrival={ev['ipi_arrival']}")
        if out.rcu_note:
            lines.append(f"rcu: {out.rcu_note}")
    lines.append(f"trace records: {len(out.trace)}")
    lines += ["", "--- scenario ---", dumps(sc)]
    return "\n".join(lines)


def write_bundle(out: RunOutcome, out_dir) -> dict[str, Path]:
    sc = out.scenario
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    comment = header_comment(sc)
    files = {name: out_dir / fname for name, fname in (
        ("scenario", "scenario.scn"), ("trace", "trace.csv"), ("collector", "collector.csv"),
        ("summary", "summary.txt"))}
    files["scenario"].write_text(dumps(sc), encoding="utf-8")
    files["trace"].write_text(trace_to_csv(out.trace, comment), encoding="utf-8")
    rows = out.collector_rows
    buf = io.StringIO()
    buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("core", "kind", "count"))
    w.writerows(rows)
    files["collector"].write_text(buf.getvalue(), encoding="utf-8")
    for stale in ("stats.csv", "persistence.csv", "persistence.png"):
        (out_dir / stale).unlink(missing_ok=True)
    if out.stats is not None and out.ok:
        files["stats"] = out_dir / "stats.csv"
        files["persistence"] = out_dir / "persistence.csv"
        files["figure"] = out_dir / "persistence.png"
        files["stats"].write_text(stats_csv([(sc.name, sc.mode, out.stats)], comment),
                                  encoding="utf-8")
        files["persistence"].write_text(persistence_csv(out.stats, comment), encoding="utf-8")
        plot_persistence(out.stats, files["figure"], f"{sc.name} ({sc.mode})")
    if out.bench is not None:
        files.update(write_bench(out.bench, out_dir, comment))
    files["summary"].write_text(_summary(out), encoding="utf-8")
    out.files = files
    return files


def run(sc: Scenario, out_dir) -> RunOutcome:
    """Execute ``sc`` and write its report bundle; I/O failures give exit status 4."""
    out = execute(sc)
    try:
        write_bundle(out, out_dir)
    except OSError as exc:
        out.status, out.error = EXIT_IO, f"{type(exc).__name__}: {exc}"
    return out


# ---- compare ------------------------------------------------------------------------

@dataclass
class RunRow:
    configuration: str
    period_ns: int
    min_ns: int
    max_ns: int
    duration_ns: int

    @property
    def jitter_ns(self) -> int:
        return self.max_ns - self.min_ns


def load_run(run_dir) -> RunRow:
    run_dir = Path(run_dir)
    stats_path, scn_path = run_dir / "stats.csv", run_dir / "scenario.scn"
    if not stats_path.is_file() or not scn_path.is_file():
        raise MissingRun(f"{run_dir} has no completed run (stats.csv / scenario.scn missing)")
    rows = read_csv_rows(stats_path)
    if not rows:
        raise MissingRun(f"{stats_path} holds no stats row")
    sc = loads(scn_path.read_text(encoding="utf-8"))
    period = sc.params.get("period_ns") or sc.params.get("interval_ns") or 0
    r = rows[0]
    return RunRow(f"{r['scenario']} ({r['mode']})", int(period), int(r["min_ns"]),
                  int(r["max_ns"]), sc.duration_ns)


def _ratio(a: int, b: int) -> str:
    if a == b:
        return "1.0"
    if a == 0:
        return "inf"
    return f"{b / a:.4g}"


def compare(dir_a, dir_b) -> list[tuple[str, ...]]:
    """Rows in Configuration / Period / Min Lat / Max Lat / Duration order: one
    per run, then a jitter row per run and the ratios of run b over run a.
    Jitter rows carry max minus min in the Max Lat column."""
    a, b = load_run(dir_a), load_run(dir_b)
    table = [COMPARE_HEADER]
    for r in (a, b):
        table.append((r.configuration, f"{r.period_ns} ns", f"{r.min_ns} ns", f"{r.max_ns} ns",
                      f"{r.duration_ns} ns"))
    for r in (a, b):
        table.append((f"jitter {r.configuration}", "", "", f"{r.jitter_ns} ns", ""))
    table.append(("ratio b/a", _ratio(a.period_ns, b.period_ns), _ratio(a.min_ns, b.min_ns),
                  _ratio(a.max_ns, b.max_ns), _ratio(a.duration_ns, b.duration_ns)))
    table.append(("jitter ratio b/a", "", "", _ratio(a.jitter_ns, b.jitter_ns), ""))
    return table


def compare_csv(table) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table)
    return buf.getvalue()


def format_table(table) -> str:
    widths = [max(len(str(row[i])) for row in table) for i in range(len(table[0]))]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip()
                     for row in table)


def plot_compare(dir_a, dir_b, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = [load_run(d) for d in (dir_a, dir_b)]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(runs))
    mins = [max(r.min_ns, 1) for r in runs]
    maxs = [max(r.max_ns, 1) for r in runs]
    ax.bar(x - 0.2, mins, 0.4, label="Min Lat", color="#6a994e")
    ax.bar(x + 0.2, maxs, 0.4, label="Max Lat", color="#bc4749")
    ax.set_xticks(x, [r.configuration for r in runs], fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("latency (ns)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def main_compare(dir_a, dir_b, out_dir) -> str:
    table = compare(dir_a, dir_b)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "compare.csv").write_text(compare_csv(table), encoding="utf-8")
    plot_compare(dir_a, dir_b, out_dir / "compare.png")
    return format_table(table)

