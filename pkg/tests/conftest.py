import pytest

from support import cluttered_scene, free_scene, wall_scene


@pytest.fixture
def free():
    return free_scene()


@pytest.fixture
def wall():
    return wall_scene()


@pytest.fixture
def clutter():
    return cluttered_scene()


def pytest_terminal_summary(terminalreporter):
    from support import CRITERIA

    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        passed, title, detail = CRITERIA[number]
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
