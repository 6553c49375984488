import numpy as np
import pytest

from lmce.fields import Grid


def torsion_series(x1, x2, terms=201):
    """Square torsion function, -Lap psi = 1 with zero boundary data, by double sine series."""
    out = np.zeros(np.broadcast(x1, x2).shape)
    for m in range(1, terms, 2):
        sm = np.sin(m * np.pi * x1)
        for n in range(1, terms, 2):
            out += 16.0 / (np.pi ** 4 * m * n * (m * m + n * n)) * sm * np.sin(n * np.pi * x2)
    return out


@pytest.fixture(scope="session")
def g33():
    return Grid.unit_square(33)


@pytest.fixture(scope="session")
def g65():
    return Grid.unit_square(65)


@pytest.fixture(scope="session")
def g129():
    return Grid.unit_square(129)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; lines are echoed in the summary."""
    def record(number, name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}  {name}  {detail}".rstrip()
        request.config.acceptance_lines.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
