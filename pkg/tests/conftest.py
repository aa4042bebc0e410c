from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (name, [outcomes])
_criteria: dict[int, tuple[str, list[bool]]] = {}


def pytest_collection_finish(session):
    # runs after -k/-m deselection, so only selected checks are counted
    for item in session.items:
        mark = item.get_closest_marker("criterion")
        if mark:
            number, name = mark.args
            _criteria.setdefault(number, (name, []))
            item.user_properties.append(("criterion", number))


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    if report.when == "call" or report.failed:
        _criteria[number][1].append(report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        name, outcomes = _criteria[number]
        status = "NOT RUN" if not outcomes else "PASS" if all(outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {name} ({len(outcomes)} checks)")


@pytest.fixture(autouse=True)
def _no_ambient_cache(monkeypatch):
    monkeypatch.delenv("XSHOT_CACHE_DIR", raising=False)


@pytest.fixture
def uniform():
    from xshot.backends import UniformBackend

    return UniformBackend()
