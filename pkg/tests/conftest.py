import numpy as np
import pytest

_CRITERION_OF: dict[str, tuple[int, str]] = {}
_RESULTS: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _CRITERION_OF[item.nodeid] = tuple(mark.args)


def pytest_runtest_logreport(report):
    crit = _CRITERION_OF.get(report.nodeid)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        if hasattr(report, "wasxfail"):
            outcome = "xfail" if report.skipped else "fail"
        elif report.skipped:
            outcome = "skip"
        else:
            outcome = "pass" if report.passed else "fail"
        _RESULTS.setdefault(crit[0], []).append((report.nodeid.split("::")[-1], outcome, crit[1]))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        rows = _RESULTS[number]
        title = rows[0][2]
        failed = [n for n, o, _ in rows if o == "fail"]
        xfailed = [n for n, o, _ in rows if o == "xfail"]
        # a documented expected failure still leaves the criterion unmet
        status = "FAIL" if failed else ("FAIL (documented)" if xfailed else "PASS")
        line = f"criterion {number:2d} {status}: {title} [{len(rows)} check(s)]"
        if xfailed:
            line += f"; expected failures: {', '.join(xfailed)}"
        if failed:
            line += f"; failed: {', '.join(failed)}"
        tr.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
