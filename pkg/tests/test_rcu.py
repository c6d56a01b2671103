import pytest

from isoscope.engine import Simulator
from isoscope.errors import NotWatched, UnknownCore, UnwatchedRcuRead
from isoscope.rcu import RcuModel
from isoscope.workloads import Machine, NoiseProfile, run_counter_toggle


def started_gp(n=3):
    rcu = RcuModel(n)
    w = rcu.synchronize_rcu("writer")
    assert rcu.gp_step()
    return rcu, w


def test_isolating_a_core_shrinks_the_wait_set():
    rcu, _ = started_gp()
    assert set(rcu.quiescent) == {0, 1, 2}
    rcu.mark_isolated(2)
    assert set(rcu.quiescent) == {0, 1}
    assert 2 not in rcu.watched and 2 in rcu.isolated


def test_mark_unmark_without_gp_restores_watched():
    rcu = RcuModel(3)
    rcu.mark_isolated(1)
    rcu.unmark_isolated(1)
    assert rcu.watched == {0, 1, 2} and not rcu.isolated


def test_last_blocker_isolated_completes_gp():
    rcu, w = started_gp()
    assert not rcu.report_quiescent(0)
    assert not rcu.report_quiescent(1)
    rcu.mark_isolated(2)
    # completion predicate recomputed over the quiescent map
    assert all(rcu.quiescent.get(c, False) for c in rcu.watched) or rcu.gp_seq == 1
    assert rcu.gp_seq == 1 and w.done


def test_last_report_completes():
    rcu, w = started_gp(2)
    assert rcu.report_quiescent(0) is False
    assert rcu.report_quiescent(1) is True
    assert rcu.gp_seq == 1 and w.done


def test_isolated_core_report_rejected():
    rcu, _ = started_gp()
    rcu.mark_isolated(2)
    with pytest.raises(NotWatched):
        rcu.report_quiescent(2)


def test_unknown_core():
    with pytest.raises(UnknownCore):
        RcuModel(2).mark_isolated(2)


def test_synchronize_waits_for_a_gp_starting_after_the_call():
    rcu, first = started_gp(2)
    late = rcu.synchronize_rcu("late")
    assert late.gp_awaited == 2
    rcu.report_quiescent(0)
    rcu.report_quiescent(1)
    assert first.done and not late.done
    assert rcu.gp_step()
    rcu.report_quiescent(0)
    rcu.report_quiescent(1)
    assert late.done


def test_release_time_is_last_quiescent_report():
    sim = Simulator(3)
    rcu = RcuModel(3, sim, gp_step_ns=100)
    w = rcu.synchronize_rcu("writer")
    reports = {0: 300, 1: 900, 2: 650}
    for core, t in reports.items():
        sim.schedule(t, core, "workload", core, lambda ev: (rcu.report_quiescent(ev.payload), None)[1])
    sim.run_until(1_000_000)
    assert w.done_at == max(reports.values())
    details = [r.detail for r in sim.trace if r.kind == "rcu"]
    assert details[0] == "gp_start:1" and details[-1] == "gp_end:1"
    assert "qs:1:1" in details


def test_fix_keeps_kthread_off_isolated_cores():
    rcu = RcuModel(4, fix=True)
    rcu.mark_isolated(2)
    assert 2 not in rcu.gp_kthread_allowed
    unfixed = RcuModel(4, fix=False, gp_kthread_allowed={2})
    unfixed.mark_isolated(2)
    assert unfixed.gp_kthread_allowed == {2}


def test_kernel_context_read_on_unwatched_core():
    rcu = RcuModel(3, kernel_context=True)
    rcu.read_lock(2)
    rcu.mark_isolated(2)
    with pytest.raises(UnwatchedRcuRead):
        rcu.read_lock(2)


def _pathology(fix: bool):
    noise = NoiseProfile(tick_period_ns=1_000_000, tick_cost="constant:8000",
                         rcu_sync_period_ns=10_000_000)
    m = Machine(4, 0, noise, rcu_fix=fix, kthread_allowed={2})
    m.install_noise()
    run_counter_toggle(2000, 100_000_000, True, machine=m)
    return m


def test_pathology_stalls_without_fix():
    m = _pathology(False)
    assert m.rcu.gp_seq == 0 and len(m.rcu.waiters) == 10
    assert any(r.detail.startswith("stall:") for r in m.sim.trace if r.kind == "rcu")


def test_pathology_completes_with_fix():
    m = _pathology(True)
    assert m.rcu.waiters == [] and len(m.rcu.completed) == 10
    # the kthread ran on a housekeeping core, never on the isolated one
    assert {r.core for r in m.sim.trace if r.kind == "gp"} <= {0, 1, 3}


def test_liveness_bound_under_fix():
    """Watched cores report within B of the GP start -> release within B + one kthread step."""
    sim = Simulator(3)
    rcu = RcuModel(3, sim, gp_step_ns=250)
    rcu.mark_isolated(2)
    bound = 5000
    w = rcu.synchronize_rcu("writer")
    for core, t in ((0, 250 + 1200), (1, 250 + bound)):
        sim.schedule(t, core, "workload", core, lambda ev: (rcu.report_quiescent(ev.payload), None)[1])
    sim.run_until(100_000)
    assert w.done_at <= w.issued_at + bound + 250


def test_no_expedited_ipi_kind():
    from isoscope.ipi import IpiKind
    assert not any("xpedit" in k.value for k in IpiKind)
