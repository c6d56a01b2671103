import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"
FIXTURES = sorted(p.stem for p in SCENARIOS.glob("*.scn"))

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# lines printed in the terminal summary by the acceptance tests
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture(scope="session")
def fixture_runs(tmp_path_factory):
    """Every repo fixture run twice into separate directories (lazily, once per session)."""
    from isoscope.report import run
    from isoscope.scenario import load_scenario

    cache: dict[str, dict] = {}

    def get(name: str) -> dict:
        if name not in cache:
            sc = load_scenario(SCENARIOS / f"{name}.scn")
            entry = {"scenario": sc}
            for tag in ("a", "b"):
                out_dir = tmp_path_factory.mktemp(f"{name}-{tag}")
                t0 = time.perf_counter()
                outcome = run(sc, out_dir)
                entry[tag] = outcome
                entry[f"{tag}_dir"] = out_dir
                entry[f"{tag}_seconds"] = time.perf_counter() - t0
                # the in-memory trace is not needed after the files are written
                if tag == "b":
                    outcome.trace = []
            cache[name] = entry
        return cache[name]

    return get
