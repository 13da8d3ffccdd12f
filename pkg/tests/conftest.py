import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.fixture
def measured(request):
    """Attach a short measurement string to the criterion line of the summary."""

    def note(text):
        request.node.user_properties.append(("measured", text))

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    notes = "; ".join(v for k, v in item.user_properties if k == "measured")
    _RESULTS[number] = (title, "PASS" if rep.passed else "FAIL", notes)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_RESULTS):
        title, status, notes = _RESULTS[n]
        line = f"criterion {n:2d}: {status}  {title}"
        terminalreporter.write_line(line + (f"  [{notes}]" if notes else ""))
