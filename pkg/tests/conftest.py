import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gca.grid import NeighborhoodSpec, State

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def spec_r2():
    return NeighborhoodSpec(2, "L1")


def line_state(n, D=16, axis=0, start=(0, 0, 0)):
    cells = np.tile(np.asarray(start, dtype=np.int64), (n, 1))
    cells[:, axis] += np.arange(n)
    return State.from_cells(cells, D)


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """``record(number, passed, detail, gating=True)`` adds a criterion line to the summary."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, passed, detail, gating=True):
        tag = "PASS" if passed else "FAIL"
        if not gating:
            tag += " (report only)"
        lines[number] = f"criterion {number}: {tag} {detail}"
        print(lines[number])

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
