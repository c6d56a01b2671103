"""Latency statistics, persistence histograms and the isolation statistics collector."""
from __future__ import annotations

import csv
import io
from array import array
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptySamples

N_BUCKETS = 64
# 64 log-spaced buckets spanning 1 ns .. 1 s; bucket 0 also takes sub-ns
# samples (i.e. 0) and the last bucket takes anything >= 1 s.
BUCKET_EDGES = np.logspace(0, 9, N_BUCKETS + 1)
BUCKET_EDGES[0] = 0.0

STATS_HEADER = ("scenario", "mode", "count", "min_ns", "max_ns", "jitter_ns")
HIST_HEADER = ("bucket_lo_ns", "bucket_hi_ns", "count")
COLLECTOR_HEADER = ("core", "kind", "count")


def bucket_index(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.clip(np.searchsorted(BUCKET_EDGES, v, side="right") - 1, 0, N_BUCKETS - 1)


def histogram(values) -> np.ndarray:
    return np.bincount(bucket_index(values), minlength=N_BUCKETS).astype(np.int64)


@dataclass(frozen=True)
class LatencyStats:
    count: int
    min_ns: int
    max_ns: int
    sum_ns: int
    histogram: tuple[int, ...]

    @property
    def jitter_ns(self) -> int:
        return self.max_ns - self.min_ns

    @property
    def mean_ns(self) -> float:
        return self.sum_ns / self.count

    def buckets(self) -> list[tuple[float, float, int]]:
        return [(float(BUCKET_EDGES[i]), float(BUCKET_EDGES[i + 1]), c)
                for i, c in enumerate(self.histogram)]


def summarize(samples) -> LatencyStats:
    """min/max/jitter and the persistence histogram of raw integer samples."""
    arr = np.asarray(samples, dtype=np.int64)
    if arr.size == 0:
        raise EmptySamples("cannot summarize an empty sample set")
    return LatencyStats(
        count=int(arr.size),
        min_ns=int(arr.min()),
        max_ns=int(arr.max()),
        sum_ns=int(arr.sum()),
        histogram=tuple(int(c) for c in histogram(arr)),
    )


class LatencyRecorder:
    """Append-only sample store; cheap enough for millions of samples."""

    def __init__(self):
        self.samples = array("q")

    def add(self, value: int) -> None:
        self.samples.append(value)

    def extend(self, values: Iterable[int]) -> None:
        self.samples.extend(values)

    def __len__(self) -> int:
        return len(self.samples)

    def stats(self) -> LatencyStats:
        return summarize(np.frombuffer(self.samples, dtype=np.int64) if self.samples else [])


def stats_csv(rows: Iterable[tuple[str, str, LatencyStats]], comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for scenario, mode, st in rows:
        w.writerow((scenario, mode, st.count, st.min_ns, st.max_ns, st.jitter_ns))
    return buf.getvalue()


def persistence_csv(stats: LatencyStats, comment: str | None = None) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HIST_HEADER)
    for lo, hi, c in stats.buckets():
        w.writerow((f"{lo:.6g}", f"{hi:.6g}", c))
    return buf.getvalue()


def export_persistence(stats: LatencyStats, path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(persistence_csv(stats, comment))


def read_csv_rows(path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    return list(csv.DictReader(lines))


class IsolationStatsCollector:
    """Per-core counts of interrupts that were blocked or deferred."""

    def __init__(self):
        self.counts: Counter[tuple[int, str]] = Counter()

    def record(self, core: int, kind: str) -> None:
        self.counts[(core, kind)] += 1

    def rows(self) -> list[tuple[int, str, int]]:
        return sorted((c, k, n) for (c, k), n in self.counts.items())

    def total(self, suffix: str = "") -> int:
        return sum(n for (_, k), n in self.counts.items() if k.endswith(suffix))

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLLECTOR_HEADER)
        w.writerows(self.rows())
        return buf.getvalue()


def trace_derived_counts(records) -> Counter:
    """Recount blocked/deferred interrupts straight from trace records."""
    counts: Counter[tuple[int, str]] = Counter()
    for rec in records:
        _, core, kind, detail = rec
        if kind == "ipi":
            verb, _, rest = detail.partition(":")
            if verb not in ("virtual", "cached"):
                continue
            ipi_kind, _, route = rest.partition(":")
            dst = int(route.split("->")[1])
            counts[(dst, f"{ipi_kind}-{'deferred' if verb == 'virtual' else 'blocked'}")] += 1
        elif kind == "irq" and detail.startswith("masked:"):
            counts[(int(core), f"{detail[7:]}-masked")] += 1
    return counts
