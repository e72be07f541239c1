"""Acceptance bookkeeping: tests marked ``criterion(n, title)`` are grouped and
reported as one PASS/FAIL line per criterion at the end of the run."""

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    entry = item.config._criteria.setdefault(number, {"title": title, "ok": True, "notes": []})
    entry["ok"] &= rep.passed
    if rep.when == "call":
        entry["notes"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        c = criteria[number]
        line = f"criterion {number:>2}: {'PASS' if c['ok'] else 'FAIL'}  {c['title']}"
        if c["notes"]:
            line += "  [" + "; ".join(c["notes"]) + "]"
        terminalreporter.write_line(line)
