"""Shared pytest setup: makes the helper modules importable and reports acceptance criteria."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "Reference log excerpt reproduction",
    2: "Fixation oracle equivalence",
    3: "Dwell conservation",
    4: "Clustering recovery, ranking and determinism",
    5: "Metric oracle equivalence and monotonicity",
    6: "Explainability self-containment",
    7: "Privacy fail-closed",
    8: "Stream/batch adaptation equivalence",
    9: "Throughput sanity (100k samples)",
}

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number exercised by the test")


def pytest_runtest_logreport(report):
    number = _criterion_of(report)
    if number is None:
        return
    failed = report.failed or (report.when == "call" and report.outcome != "passed")
    if report.when == "call" or failed:
        prev = _outcomes.get(number, "PASS")
        _outcomes[number] = "FAIL" if failed or prev == "FAIL" else "PASS"


def _criterion_of(report):
    for name in report.keywords:
        if name.startswith("criterion_"):
            return int(name.split("_", 1)[1])
    return None


def pytest_collection_modifyitems(items):
    # expose the marker argument as a keyword the report hook can see
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.keywords[f"criterion_{mark.args[0]}"] = True


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        status = _outcomes.get(number, "NOT RUN")
        terminalreporter.write_line(f"criterion {number}: {status} - {title}")
