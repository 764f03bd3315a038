import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evanslab.eigen import LinearizedCoefficients, linearize  # noqa: E402
from evanslab.model import get_builtin  # noqa: E402
from evanslab.profile import solve_profile  # noqa: E402


@pytest.fixture(scope="session")
def burgers():
    m = get_builtin("burgers_outflow")
    p = solve_profile(m)
    return m, p, linearize(m, p)


@pytest.fixture(scope="session")
def coupled():
    m = get_builtin("coupled_burgers")
    p = solve_profile(m)
    return m, p, linearize(m, p)


@pytest.fixture(scope="session")
def const_layer():
    return LinearizedCoefficients.constant_coefficients(1.0, 1.0, X_max=30.0)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, name, detail, secs = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:>2} {'PASS' if ok else 'FAIL'}  {name}  ({secs:.1f} s)  {detail}")
