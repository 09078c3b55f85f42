import pytest

# acceptance criteria report a one-line verdict here; printed after the run
CRITERIA = {}


@pytest.fixture()
def verdict(request):
    """``verdict(n, ok, detail)`` records the outcome of acceptance criterion n."""
    def record(number, ok, detail=""):
        CRITERIA[number] = (bool(ok), detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
