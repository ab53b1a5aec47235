"""Collects acceptance outcomes and prints one pass/fail line per criterion
at the end of the session."""
import pytest

ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.fixture
def accept(request):
    """Callable ``accept(ok, detail)`` that records the criterion named by the
    test's ``acceptance`` marker. A test that errors before recording is
    reported as FAIL."""
    number, title = request.node.get_closest_marker("acceptance").args

    def record(ok, detail=""):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        return bool(ok)

    yield record
    if number not in ACCEPTANCE:
        ACCEPTANCE[number] = (title, False, "raised before completing")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
