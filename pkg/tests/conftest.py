import time
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# Wall-clock anchor for the suite runtime budget check.
SESSION_T0 = time.monotonic()
BUDGET_SECONDS = 300.0


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


def pytest_collection_modifyitems(session, config, items):
    # The acceptance module asserts whole-suite properties (including the
    # runtime budget), so it must run after everything else.
    acceptance = [i for i in items if "test_acceptance" in i.nodeid]
    rest = [i for i in items if "test_acceptance" not in i.nodeid]
    items[:] = rest + acceptance


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.monotonic() - SESSION_T0
    ok = elapsed < BUDGET_SECONDS
    print(f"\nsuite wall time {elapsed:.1f}s "
          f"({'within' if ok else 'OVER'} the {BUDGET_SECONDS:.0f}s budget)")
    if not ok and session.exitstatus == 0:
        session.exitstatus = 1
