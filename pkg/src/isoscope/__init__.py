"""Deterministic simulator of per-core interrupt isolation on a multicore machine,
with latency measurement tooling and a live shared-memory round-trip benchmark."""
from .engine import CostDist, Simulator
from .isolator import Isolator, Mask
from .measure import LatencyStats, summarize
from .scenario import Scenario, load_scenario
from .workloads import Machine, NoiseProfile

__all__ = ["CostDist", "Isolator", "LatencyStats", "Machine", "Mask", "NoiseProfile",
           "Scenario", "Simulator", "load_scenario", "summarize"]
