import re

import pytest

_CRITERIA: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = re.match(r"test_criterion_(\d+)_(\w+)", item.name)
    if not m or rep.when != "call":
        return
    detail = getattr(item, "criterion_detail", "")
    _CRITERIA[int(m.group(1))] = ("PASS" if rep.passed else "FAIL", f"{m.group(2)} {detail}".strip())


@pytest.fixture
def record(request):
    """Attach a one-line measurement summary to the acceptance line."""

    def _record(text):
        request.node.criterion_detail = text

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        status, text = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {text}")
