import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import SCENARIOS
from isoscope.engine import CostDist
from isoscope.errors import ParseError, ValidationError
from isoscope.isolator import ALL_TICK_WORK, Mask, TickCosts, TickWork
from isoscope.scenario import (
    WORKLOAD_PARAMS,
    ChannelSpec,
    IpiSpec,
    IsolationSpec,
    RcuSpec,
    Scenario,
    dumps,
    header_comment,
    load_scenario,
    loads,
    scenario_hash,
    write_back,
)
from isoscope.workloads import NoiseProfile

MINIMAL = """
[scenario]
name = tiny
workload = counter_toggle
duration_ns = 1000000

[workload]
interval_ns = 2000
"""


def test_isolated_gpio_fixture_matches_isolator_row():
    sc = load_scenario(SCENARIOS / "isolated_gpio.scn")
    assert sc.workload == "gpio_response" and sc.mode == "isolated"
    assert sc.params["period_ns"] == 2000
    assert sc.params["core"] == 2
    (w,) = sc.isolation
    assert (w.core, w.mask, w.start_ns, w.stop_ns) == (2, Mask.CLOCK | Mask.IPI, 0, None)


def test_baseline_fixture_has_no_isolation():
    sc = load_scenario(SCENARIOS / "preempt_rt_gpio.scn")
    assert sc.mode == "baseline" and sc.params["period_ns"] == 200_000


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.scn")), ids=lambda p: p.stem)
def test_every_fixture_round_trips(path):
    sc = load_scenario(path)
    assert loads(dumps(sc)) == sc


def test_core_equal_to_n_cores_rejected():
    text = MINIMAL + "\n[isolation.0]\ncore = 4\nmask = CLOCK\n"
    with pytest.raises(ValidationError) as exc:
        loads(text)
    assert exc.value.field == "isolation.0.core"


def test_missing_seed_defaults_to_zero():
    sc = loads(MINIMAL)
    assert sc.seed == 0
    assert "seed=0" in header_comment(sc)


def test_parse_error_reports_line():
    text = "[scenario]\nname = x\nthis line has no separator\n"
    with pytest.raises(ParseError) as exc:
        loads(text)
    assert exc.value.line == 3


@pytest.mark.parametrize("text,field", [
    (MINIMAL + "\n[bogus]\nx = 1\n", "bogus"),
    (MINIMAL.replace("interval_ns = 2000", "interval_ns = 2000\nperiod_ns = 5"), "workload.period_ns"),
    (MINIMAL.replace("interval_ns = 2000", "interval_ns = 0"), "workload.interval_ns"),
    (MINIMAL + "\n[channel]\ncapacity = 48\n", "channel.capacity"),
    (MINIMAL + "\n[isolation.0]\ncore = 1\nmask = CLOCK\nstop_ns = 5000000\n", "isolation.0.start_ns"),
    (MINIMAL + "\n[isolation.0]\ncore = 1\nmask = CLOCK\ntick_period_ns = 0\n",
     "isolation.0.tick_period_ns"),
])
def test_validation_errors(text, field):
    with pytest.raises(ValidationError) as exc:
        loads(text)
    assert exc.value.field.startswith(field)


def test_required_workload_key():
    with pytest.raises(ValidationError):
        loads(MINIMAL.replace("interval_ns = 2000", ""))


def test_write_back_and_reload(tmp_path):
    sc = load_scenario(SCENARIOS / "rcu_pathology.scn")
    write_back(sc, tmp_path / "x.scn")
    again = load_scenario(tmp_path / "x.scn")
    assert again == sc and scenario_hash(again) == scenario_hash(sc)


def test_overrides_change_hash_and_revalidate():
    sc = loads(MINIMAL)
    other = sc.with_overrides(seed=9)
    assert other.seed == 9 and sc.seed == 0
    assert scenario_hash(other) != scenario_hash(sc)
    with pytest.raises(ValidationError):
        sc.with_overrides(duration_ns=1000)


costs = st.one_of(st.integers(0, 10_000).map(CostDist.constant),
                  st.tuples(st.integers(0, 5000), st.integers(0, 5000)).map(
                      lambda p: CostDist(min(p), max(p))))
masks = st.integers(1, 7).map(Mask)
kinds = st.sets(st.sampled_from(list(TickWork))).map(frozenset)


@st.composite
def scenarios(draw):
    n = draw(st.integers(2, 6))
    duration = draw(st.integers(10_000, 10**9))
    workload = draw(st.sampled_from(sorted(WORKLOAD_PARAMS)))
    if workload == "gpio_response":
        params = dict(core=draw(st.integers(0, n - 1)), period_ns=draw(st.integers(1, duration)),
                      poll_granularity_ns=draw(st.integers(0, 100)),
                      response_cost_ns=draw(st.integers(0, 1000)),
                      poll_phase_ns=draw(st.integers(0, 99)), first_ns=draw(st.integers(0, 100)))
    elif workload == "counter_toggle":
        params = dict(core=draw(st.integers(0, n - 1)), interval_ns=draw(st.integers(1, duration)),
                      read_granularity_ns=draw(st.integers(0, 100)),
                      read_phase_ns=draw(st.integers(0, 99)))
    elif workload == "cross_core":
        a, b = draw(st.lists(st.integers(0, n - 1), min_size=2, max_size=2, unique=True))
        params = dict(core_a=a, core_b=b, period_ns=draw(st.integers(1, duration)),
                      hop_delay_ns=draw(st.integers(0, 500)),
                      poll_granularity_ns=draw(st.integers(0, 100)))
    else:
        pin = draw(st.one_of(st.just(""), st.tuples(st.integers(0, 7), st.integers(0, 7)).map(
            lambda p: f"{p[0]},{p[1]}")))
        params = dict(mode=draw(st.sampled_from(["sim", "live"])), loops=draw(st.integers(1, 50)),
                      roundtrips=draw(st.integers(1, 5000)), hop_delay_ns=draw(st.integers(0, 500)),
                      poll_granularity_ns=draw(st.integers(0, 100)), pin=pin)
    windows = []
    for _ in range(draw(st.integers(0, 2))):
        start = draw(st.integers(0, duration - 1))
        stop = draw(st.one_of(st.none(), st.integers(start + 1, duration)))
        windows.append(IsolationSpec(draw(st.integers(0, n - 1)), draw(masks), start, stop,
                                     draw(st.integers(1, 10**7)), draw(kinds)))
    noise = NoiseProfile(draw(st.integers(0, 10**7)), draw(costs), draw(st.integers(0, 10**9)),
                         draw(costs), draw(st.floats(0, 1e5, allow_nan=False)), draw(costs),
                         draw(costs), draw(st.integers(0, 10**8)))
    allowed = draw(st.one_of(st.none(), st.lists(st.integers(0, n - 1), min_size=1,
                                                 max_size=n, unique=True).map(tuple)))
    return Scenario(
        name=draw(st.text("abcxyz_-0123456789", min_size=1, max_size=12)),
        workload=workload, duration_ns=duration, params=params, n_cores=n,
        seed=draw(st.integers(0, 2**64 - 1)), drain_ns=draw(st.integers(0, 10**7)),
        trace_workload=draw(st.booleans()), output_dir=draw(st.sampled_from(["", "out/x"])),
        noise=noise, isolation=windows,
        channel=ChannelSpec(2 ** draw(st.integers(1, 10)), draw(st.integers(8, 256))),
        ipi=IpiSpec(draw(st.integers(0, 5000)), draw(st.integers(0, 5_000_000)), draw(costs),
                    draw(st.integers(1, 4096))),
        rcu=RcuSpec(draw(st.booleans()), allowed, draw(st.integers(0, 10_000)),
                    draw(st.integers(1, 10**9)), draw(st.booleans())),
        tick_costs=TickCosts(*(draw(st.integers(0, 100)) for _ in range(5))),
    )


@given(scenarios())
def test_serialization_is_lossless(sc):
    assert loads(dumps(sc)) == sc


def test_default_kinds_are_all_tick_work():
    sc = loads(MINIMAL + "\n[isolation.0]\ncore = 2\nmask = CLOCK|IPI\n")
    assert sc.isolation[0].kinds == ALL_TICK_WORK
