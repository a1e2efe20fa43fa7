import sys
from functools import lru_cache
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rodchain.instances import polynomial_instance, unit_instance  # noqa: E402
from rodchain.spectrum import solve_spectrum  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


@lru_cache(maxsize=None)
def spectrum_of(key, count: int):
    """Cached spectrum: ``key`` is ``"unit"`` or a polynomial seed."""
    config = unit_instance() if key == "unit" else polynomial_instance(key)
    return config, solve_spectrum(config, count)


@pytest.fixture(scope="session")
def unit():
    return unit_instance()


@pytest.fixture
def report_line():
    """Record one acceptance line, printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
