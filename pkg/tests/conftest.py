import numpy as np
import pytest

from dualpor.cell import build_geometry
from dualpor.petrophysics import reference_pair


@pytest.fixture(scope="session")
def pair():
    return reference_pair()


@pytest.fixture(scope="session")
def box16():
    return build_geometry("centered-box", 16, 2, side=0.5)


@pytest.fixture(scope="session")
def box8():
    return build_geometry("centered-box", 8, 2, side=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion(request):
    """Record and print a pass/fail line for an acceptance criterion, then assert it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def check(number, name, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
