import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evanslab.eigen import (LinearizedCoefficients, adjoint_matrix, consistent_splitting_check, limit_matrix,
                            mode_set, speed_data, system_matrix)
from evanslab.errors import SingularViscosity, SplittingFailure


@pytest.fixture(scope="module")
def unit():
    return LinearizedCoefficients.constant_coefficients(1.0, 1.0)


def test_system_matrix_examples(unit):
    assert system_matrix(unit, 0, 0.3) == pytest.approx(np.array([[0, 1], [0, 1]]))
    assert system_matrix(unit, 1, 2.0) == pytest.approx(np.array([[0, 1], [1, 1]]))


def test_adjoint_example(unit):
    assert adjoint_matrix(unit, 1, 0.0) == pytest.approx(np.array([[0, 1], [1, -1]]))


def test_adjoint_limit(coupled):
    _, _, c = coupled
    Bi = np.linalg.inv(c.B_plus)
    lam = 0.4 + 1.1j
    n = c.n
    expect = np.block([[np.zeros((n, n)), lam * Bi], [np.eye(n), -c.A_plus @ Bi]])
    assert adjoint_matrix(c, lam, 1e3) == pytest.approx(expect)


@pytest.mark.parametrize("name", ["burgers", "coupled"])
def test_adjoint_identity(name, request):
    # At S + S' + S A = 0 makes Z S W constant along paired flows
    _, _, c = request.getfixturevalue(name)
    lam, h = 0.7 - 0.3j, 1e-5
    for x in (0.3, 1.5, 4.0):
        S = c.coupling(np.array(x))
        dS = (c.coupling(np.array(x + h)) - c.coupling(np.array(x - h))) / (2 * h)
        defect = adjoint_matrix(c, lam, x) @ S + dS + S @ system_matrix(c, lam, x)
        assert np.max(np.abs(defect)) < 1e-7


def test_linearized_burgers(burgers):
    _, p, c = burgers
    x = np.linspace(0, 10, 11)
    assert c.A(x)[:, 0, 0] == pytest.approx(-np.tanh((x + 1) / 2), abs=1e-8)
    assert c.B(x)[:, 0, 0] == pytest.approx(np.ones_like(x))
    assert np.all(c.dB(x) == 0)


def test_coupled_limit(coupled):
    _, _, c = coupled
    assert c.A_plus == pytest.approx(np.array([[1, 0.25], [0.25, -1]]))


def test_slow_root_expansion(unit):
    ms = mode_set(unit, 0.01)
    slow = ms.mu[ms.slow_index == 0][0]
    assert slow == pytest.approx((1 - np.sqrt(1.04)) / 2, abs=1e-14)
    # next term of the series is -2 lam^3
    diff = slow - ms.slow_expansion()[0]
    assert diff.real == pytest.approx(-2e-6, rel=0.05)


def test_fast_root_and_beta(unit):
    ms = mode_set(unit, 0.0, require_splitting=False)
    assert ms.mu[ms.fast][0] == pytest.approx(1.0)
    assert ms.gamma == pytest.approx([1.0])
    assert speed_data(unit)[3] == pytest.approx([1.0])


def test_splitting(unit):
    ok, dims = consistent_splitting_check(unit, 1.0)
    assert ok and dims == (1, 1)
    ok, _ = consistent_splitting_check(unit, 0.0)
    assert not ok


def test_splitting_failure_raised():
    c = LinearizedCoefficients.constant_coefficients(1.0, 1.0)
    with pytest.raises(SplittingFailure):
        mode_set(c, -2.0)    # both roots share real part 1/2 beyond the branch point


def test_singular_viscosity():
    with pytest.raises(SingularViscosity):
        LinearizedCoefficients.constant_coefficients(np.eye(2), np.diag([1.0, 1e-14]))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(0.2, 3.0), st.floats(0.0, 5.0), st.floats(-5.0, 5.0))
def test_splitting_in_right_half_plane(a, b, re, im):
    # real-part-positive lambda always splits one stable and one unstable root
    c = LinearizedCoefficients.constant_coefficients(a, b)
    lam = complex(re, im)
    if abs(lam) < 1e-3:
        return
    mu = np.linalg.eigvals(limit_matrix(c, lam))
    assert np.sort(mu.real)[0] < 0 < np.sort(mu.real)[1]
    assert np.allclose(np.sort_complex(mu), np.sort_complex(np.roots([b, -a, -lam])))
