import numpy as np
import pytest

from omnistereo.rig import BIG_RIG, SMALL_RIG


@pytest.fixture
def big():
    return BIG_RIG


@pytest.fixture
def small():
    return SMALL_RIG


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""
    lines = request.config.acceptance_lines

    def report(number, checks):
        ok = all(c[2] for c in checks)
        detail = "; ".join(f"{name} = {value}{'' if good else ' (out of tolerance)'}"
                           for name, value, good in checks)
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
