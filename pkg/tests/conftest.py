import pytest

from netform.fbode import fixed_point_solve
from netform.model import PRESETS, SolverConfig, preset

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def solved():
    """Converged solutions of every preset, keyed by name: (params, grid, solution)."""
    out = {}
    for name in PRESETS:
        params, grid, config = preset(name)
        out[name] = (params, grid, fixed_point_solve(params, grid, config))
    return out


@pytest.fixture(scope="session")
def tight_base():
    params, grid, _ = preset("base")
    return params, grid, fixed_point_solve(params, grid, SolverConfig(epsilon=1e-13))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
