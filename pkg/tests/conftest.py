from pathlib import Path

import pytest
from hypothesis import settings

from depriv import synth

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

DATA = Path(__file__).parent / "data"
FIXTURE_CSV = DATA / "fixture_200.csv"
FIXTURE_GEOJSON = DATA / "fixture_200.geojson"

_acceptance: dict = {}


@pytest.fixture(scope="session")
def fixture_records():
    return synth.fixture_records()


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        outcome = report.outcome
        if hasattr(report, "wasxfail"):
            outcome = "xfail"
        _acceptance[name] = outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in sorted(_acceptance.items()):
        label = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP", "xfail": "XFAIL"}.get(outcome, outcome)
        terminalreporter.write_line(f"[{label}] {name}")
