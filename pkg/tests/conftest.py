import re

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repro",
    derandomize=True,
    deadline=None,
    max_examples=100,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much],
    print_blob=True,
)
settings.load_profile("repro")

_CRITERIA = {}
_PATTERN = re.compile(r"test_criterion_(\d+)_")


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement to the acceptance summary."""
    def put(text):
        record_property("detail", text)
    return put


def pytest_runtest_logreport(report):
    m = _PATTERN.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    if report.when == "call" or report.outcome != "passed":
        text = next((v for k, v in report.user_properties if k == "detail"), "")
        _CRITERIA[num] = (report.outcome.upper(), report.nodeid.split("::")[-1], text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        outcome, name, text = _CRITERIA[num]
        verdict = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {verdict}  {name}  {text}")
