import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.fixture
def report(request):
    """Collect free-form detail lines shown next to the criterion verdict."""
    lines: list[str] = []
    request.node.user_properties.append(("details", lines))
    return lines.append


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _RESULTS.setdefault(number, {"title": title, "passed": True, "details": []})
    if report.failed:
        entry["passed"] = False
    if report.when == "call" or report.failed:
        for key, value in report.user_properties:
            if key == "details":
                entry["details"].extend(value)
                value.clear()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep._criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        verdict = "PASS" if entry["passed"] else "FAIL"
        tr.write_line(f"criterion {number}: {verdict}  {entry['title']}")
        for line in entry["details"]:
            tr.write_line(f"    {line}")
