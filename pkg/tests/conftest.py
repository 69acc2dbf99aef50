import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"criterion {number} [{status}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_blobs():
    lab = np.zeros((24, 24), dtype=np.int32)
    yy, xx = np.mgrid[:24, :24]
    lab[(yy - 6) ** 2 + (xx - 6) ** 2 <= 9] = 1
    lab[(yy - 16) ** 2 + (xx - 17) ** 2 <= 12] = 7
    return lab
