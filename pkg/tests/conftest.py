import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hsselfsim.core import ProblemParams, make_grid  # noqa: E402


@pytest.fixture(scope="session")
def subcritical_params():
    return ProblemParams(3, 0.5, 3.0, 0.75)


@pytest.fixture(scope="session")
def fine_ground_state(subcritical_params):
    """Subcritical ground state (N=3, s=0.5, q=3, alpha=0.75) on a 16000-node grid."""
    from hsselfsim.solver import ground_state

    return ground_state(subcritical_params, grid=make_grid(3, 16.0, 16000, 2.0))


@pytest.fixture(scope="session")
def critical_minimizer():
    """Weighted critical minimizer for N=5, s=1, alpha=1.5 on the default grid."""
    from hsselfsim.solver import cutoff_bubble_init, minimize_quotient

    p = ProblemParams.critical(5, 1.0, 1.5)
    g = make_grid(5)
    return p, minimize_quotient(p, True, cutoff_bubble_init(g, p))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for idx in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[idx])
