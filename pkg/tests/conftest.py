import numpy as np
import pytest

from uclab.geometry import build_domain


@pytest.fixture(scope="session")
def unit_square_64():
    return build_domain({"shape": "box", "extents": [0, 1, 0, 1]}, h=1 / 64)


@pytest.fixture(scope="session")
def centered_square_128():
    return build_domain({"shape": "box", "extents": [-0.5, 0.5, -0.5, 0.5]}, h=1 / 128)


@pytest.fixture(scope="session")
def lshape_64():
    return build_domain({"shape": "lshape", "extents": [0, 1, 0, 1]}, h=1 / 64)


def re_zk(k):
    """Re((x1 + i x2)^k) as a callable on coordinate arrays."""
    return lambda x1, x2: np.real((x1 + 1j * x2) ** k)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
