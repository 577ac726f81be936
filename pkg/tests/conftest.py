"""Per-criterion reporting for the acceptance suite.

Acceptance tests carry ``@pytest.mark.criterion(number, title, budget_s)``.
A criterion may be split over several tests; its line reads PASS only if every
part passed and the summed runtime is within budget.  A part that records
``status=WARN`` (soft criteria) is reported as WARN instead of PASS.
"""

from __future__ import annotations

import time
from collections import OrderedDict

import pytest

_RESULTS: "OrderedDict[int, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, budget_s): acceptance criterion metadata")


@pytest.fixture
def record(request):
    """Attach a detail string (and optionally a WARN status) to the current criterion part."""

    def _record(detail: str, status: str | None = None) -> None:
        request.node.user_properties.append(("detail", detail))
        if status is not None:
            request.node.user_properties.append(("status", status))

    return _record


@pytest.fixture
def stopwatch():
    start = time.perf_counter()
    return lambda: time.perf_counter() - start


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not (rep.when == "setup" and rep.failed)):
        return
    number, title, budget = mark.args
    entry = _RESULTS.setdefault(number, {"title": title, "budget": budget, "parts": []})
    props = dict(item.user_properties)
    entry["parts"].append({
        "name": item.name,
        "passed": rep.passed,
        "status": props.get("status"),
        "detail": props.get("detail", ""),
        "duration": rep.duration,
    })


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        parts = entry["parts"]
        total = sum(p["duration"] for p in parts)
        within = total < entry["budget"]
        if all(p["passed"] for p in parts) and within:
            status = "WARN" if any(p["status"] == "WARN" for p in parts) else "PASS"
        else:
            status = "FAIL"
        details = "; ".join(p["detail"] for p in parts if p["detail"])
        failed = [p["name"] for p in parts if not p["passed"]]
        extra = f" failed parts: {', '.join(failed)};" if failed else ""
        tr.write_line(f"[{status}] criterion {number:2d} {entry['title']}: {total:.1f}s "
                      f"(budget {entry['budget']:g}s);{extra} {details}")
