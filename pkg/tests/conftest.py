"""Acceptance bookkeeping: one pass/fail line per criterion at the end of the run."""

from collections import OrderedDict

import pytest

_results: "OrderedDict[str, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            cid, title = mark.args
            _results.setdefault(cid, {"title": title, "outcomes": [], "details": []})


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    mark = request.node.get_closest_marker("criterion")
    if mark:
        record_property("criterion", mark.args[0])


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    cid = props.get("criterion")
    if cid is None or cid not in _results:
        return
    entry = _results[cid]
    entry["outcomes"].append(report.outcome)
    entry["details"].extend(v for k, v in report.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, entry in _results.items():
        outcomes = entry["outcomes"]
        if not outcomes:
            status = "NOT RUN"
        elif all(o == "passed" for o in outcomes):
            status = "PASS"
        else:
            status = "FAIL"
        tr.write_line(f"{cid:<4s} {status:<8s} {entry['title']}")
        for d in entry["details"]:
            tr.write_line(f"              {d}")
