"""Collects acceptance-criterion outcomes and prints one verdict line per criterion."""
from __future__ import annotations

import pytest

_verdicts: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        entry = _verdicts.setdefault(number, {"title": title, "ok": True, "details": []})
        entry["ok"] = entry["ok"] and report.passed
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        entry = _verdicts[number]
        line = f"{'PASS' if entry['ok'] else 'FAIL'} criterion {number}: {entry['title']}"
        if entry["details"]:
            line += " (" + "; ".join(dict.fromkeys(entry["details"])) + ")"
        terminalreporter.write_line(line)
