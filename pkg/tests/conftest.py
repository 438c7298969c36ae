import os
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        _ACCEPTANCE_RESULTS[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in sorted(_ACCEPTANCE_RESULTS.items()):
        status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{status}  {name}")


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def golden_bytes():
    """Load a binary golden fixture.

    Set ASYNCDOC_REGEN=1 to (re)write fixtures from the current output;
    otherwise a missing fixture is a test error, never silently created.
    """

    def load(relpath: str, actual: bytes) -> bytes:
        path = FIXTURES / relpath
        if os.environ.get("ASYNCDOC_REGEN") == "1":
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(actual)
        if not path.exists():
            pytest.fail(f"missing golden fixture {path}; run with ASYNCDOC_REGEN=1 to create")
        return path.read_bytes()

    return load


@pytest.fixture
def golden_text():
    def load(relpath: str, actual: str) -> str:
        path = FIXTURES / relpath
        if os.environ.get("ASYNCDOC_REGEN") == "1":
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(actual, encoding="utf-8")
        if not path.exists():
            pytest.fail(f"missing golden fixture {path}; run with ASYNCDOC_REGEN=1 to create")
        return path.read_text(encoding="utf-8")

    return load
