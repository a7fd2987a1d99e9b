import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# nodeid -> (criterion number, title), filled at collection time
_criterion_of: dict[str, tuple[int, str]] = {}
_results: dict[int, tuple[str, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _criterion_of[item.nodeid] = tuple(m.args)


def pytest_runtest_logreport(report):
    if report.nodeid not in _criterion_of:
        return
    if report.when == "call" or report.outcome != "passed":
        number, title = _criterion_of[report.nodeid]
        _results[number] = (title, "PASS" if report.outcome == "passed" else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, status = _results[number]
        terminalreporter.write_line(f"{status} criterion {number:>2}: {title}")
