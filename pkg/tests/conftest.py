import re

import pytest

from nvqrng.apparatus import ApparatusParams
from nvqrng.simulate import simulate_source

SIM_SEED = 1729
SIM_SECONDS = 60.0
SIM_POWER_MW = 0.026

_criteria: dict = {}


@pytest.fixture(scope="session")
def reference_run():
    """One 60 s seeded stream at the reference apparatus, shared across tests."""
    return simulate_source(SIM_POWER_MW, ApparatusParams(), SIM_SECONDS, SIM_SEED)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    n, title = mark.args
    entry = _criteria.setdefault(n, {"title": title, "ok": True, "notes": []})
    if call.excinfo is not None:
        entry["ok"] = False
        msg = str(call.excinfo.value).strip().splitlines()
        entry["notes"].append(f"{item.name}: {msg[0] if msg else call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria, key=lambda k: [int(p) if p.isdigit() else p for p in re.split(r"(\d+)", str(k))]):
        e = _criteria[n]
        line = f"criterion {n:>2} {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        terminalreporter.write_line(line)
        for note in e["notes"]:
            terminalreporter.write_line(f"              {note}")
