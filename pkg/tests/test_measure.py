import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from isoscope.engine import Simulator
from isoscope.errors import EmptySamples
from isoscope.ipi import IpiFabric, IpiKind, IpiRequest
from isoscope.isolator import Isolator, Mask
from isoscope.measure import (
    BUCKET_EDGES,
    COLLECTOR_HEADER,
    HIST_HEADER,
    N_BUCKETS,
    STATS_HEADER,
    IsolationStatsCollector,
    LatencyRecorder,
    bucket_index,
    export_persistence,
    read_csv_rows,
    stats_csv,
    summarize,
    trace_derived_counts,
)


def test_three_samples():
    s = summarize([390, 470, 400])
    assert (s.min_ns, s.max_ns, s.jitter_ns, s.count) == (390, 470, 80, 3)


def test_single_sample_has_zero_jitter():
    s = summarize([1234])
    assert s.min_ns == s.max_ns == 1234 and s.jitter_ns == 0


def test_empty_samples_rejected():
    with pytest.raises(EmptySamples):
        summarize([])
    with pytest.raises(EmptySamples):
        LatencyRecorder().stats()


def test_buckets_are_log_spaced_and_cover_everything():
    assert len(BUCKET_EDGES) == N_BUCKETS + 1
    assert BUCKET_EDGES[0] == 0 and BUCKET_EDGES[-1] == pytest.approx(1e9)
    ratios = BUCKET_EDGES[2:] / BUCKET_EDGES[1:-1]
    assert np.allclose(ratios, ratios[0])
    assert bucket_index([0])[0] == 0
    assert bucket_index([10**12])[0] == N_BUCKETS - 1


def test_uniform_samples_touch_every_spanned_bucket():
    # buckets below ~2 ns are narrower than one integer step, so start at 100 ns
    values = np.unique(np.geomspace(100, 1e9, 5000).astype(np.int64))
    hist = summarize(values).histogram
    assert sum(hist) == values.size
    lo, hi = bucket_index([values.min()])[0], bucket_index([values.max()])[0]
    assert all(hist[i] > 0 for i in range(lo, hi + 1))


@given(st.lists(st.integers(0, 2 * 10**9), min_size=1, max_size=300))
def test_histogram_is_complete(values):
    s = summarize(values)
    assert sum(s.histogram) == s.count == len(values)
    assert s.min_ns <= s.mean_ns <= s.max_ns


@given(st.lists(st.integers(0, 10**7), min_size=1, max_size=200))
def test_bucket_contains_its_sample(values):
    for v, i in zip(values, bucket_index(values)):
        assert BUCKET_EDGES[i] <= v and (v < BUCKET_EDGES[i + 1] or i == N_BUCKETS - 1)


def test_recorder_matches_summarize():
    rec = LatencyRecorder()
    rec.extend([5, 9])
    rec.add(7)
    assert rec.stats() == summarize([5, 9, 7])


def test_csv_headers(tmp_path):
    text = stats_csv([("s", "isolated", summarize([1, 2]))], comment="hdr")
    lines = text.splitlines()
    assert lines[0] == "# hdr" and lines[1] == ",".join(STATS_HEADER)
    path = tmp_path / "p.csv"
    export_persistence(summarize([1, 2]), path, "hdr")
    rows = read_csv_rows(path)
    assert list(rows[0]) == list(HIST_HEADER) and len(rows) == N_BUCKETS
    col = IsolationStatsCollector()
    col.record(2, "TlbShootdown-deferred")
    assert col.to_csv().splitlines()[0] == ",".join(COLLECTOR_HEADER)
    assert list(csv.reader(col.to_csv().splitlines()))[1] == ["2", "TlbShootdown-deferred", "1"]


def test_collector_agrees_with_trace_recount():
    col = IsolationStatsCollector()
    sim = Simulator(4)
    iso = Isolator(sim)
    fab = IpiFabric(sim, iso, 0, 1_000_000, col)
    iso.start(2, Mask.CLOCK | Mask.IPI)
    for i in range(5):
        fab.send_ipi(IpiRequest(0, 2, IpiKind.TLB_SHOOTDOWN, f"r{i}"))
    fab.send_ipi(IpiRequest(1, 2, IpiKind.CPUFREQ_QUERY))
    fab.send_ipi(IpiRequest(1, 3, IpiKind.TLB_SHOOTDOWN, "r0"))
    sim.run_until(1000)
    recount = trace_derived_counts(sim.trace)
    assert recount == col.counts
    assert col.counts[(2, "TlbShootdown-deferred")] == 5
    assert col.counts[(2, "CpuFreqQuery-blocked")] == 1
    assert col.total("-deferred") == 5
