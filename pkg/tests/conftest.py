import sys
import time
from pathlib import Path

# test helpers (synthetic generators) live next to the tests
sys.path.insert(0, str(Path(__file__).parent))

import pytest

from synthetic import planted_fits, planted_market

# (criterion, passed, detail) lines filled in by test_acceptance.py
ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def planted():
    """Planted-bubble market (seed 0), its desk-scale fit store and the seconds spent building both."""
    t0 = time.perf_counter()
    pm = planted_market(0)
    fits = planted_fits(pm)
    return pm, fits, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
