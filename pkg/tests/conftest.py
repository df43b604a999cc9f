import re
from collections import OrderedDict

import pytest

CRITERIA = OrderedDict(
    [
        ("1", "operator-algebra residuals"),
        ("2", "BCH factorization"),
        ("3", "closed form vs oracle exponential"),
        ("4", "reductions (f = identity, zero displacement)"),
        ("5", "group-state diagnostics"),
        ("6", "Mandel checks"),
        ("7", "Wigner checks"),
        ("8", "determinism of CLI output"),
    ]
)

_outcomes = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion certified by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        label = str(marker.args[0])
        _outcomes.setdefault(item.nodeid, (label, report.passed))
        if not report.passed:
            _outcomes[item.nodeid] = (label, False)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    grouped = {}
    for nodeid, (label, passed) in _outcomes.items():
        key = re.match(r"\d+", label).group(0)
        grouped.setdefault(key, []).append((label, nodeid, passed))
    terminalreporter.section("acceptance criteria")
    for key, title in CRITERIA.items():
        items = grouped.get(key)
        if not items:
            continue
        failed = [(label, nodeid) for label, nodeid, passed in items if not passed]
        status = "PASS" if not failed else "FAIL"
        line = f"criterion {key} ({title}): {status} [{len(items) - len(failed)}/{len(items)} checks]"
        if failed:
            parts = sorted({label for label, _ in failed})
            line += f" failing: {', '.join(parts)}"
        terminalreporter.write_line(line)
