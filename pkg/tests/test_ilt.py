import numpy as np
import pytest

from evanslab.timedomain import (BoundTemplate, ContourParams, ilt_apply, ilt_green, pointwise_bound_fit,
                                 solve_linearized)
from oracles import heat_convection_green

X = np.arange(0, 301) * 0.05


@pytest.fixture(scope="module")
def const_green(const_layer):
    return ilt_green(const_layer, X, [3.0], [1e-3, 1.0, 5.0])


def test_matches_heat_kernel(const_green):
    for i, t in enumerate(const_green.t):
        ref = heat_convection_green(1.0, 1.0, X, t, 3.0)
        G = const_green.G[i, 0, :, 0, 0]
        assert np.max(np.abs(G - ref)) < 1e-8 * np.abs(ref).max()
    assert np.all(const_green.error < 1e-8)


def test_delta_mass_small_t(const_green):
    near = np.abs(X - 3.0) < 0.5
    mass = np.trapezoid(const_green.G[0, 0, near, 0, 0], X[near])
    assert mass == pytest.approx(1.0, abs=0.01)


def test_boundary_value_zero(const_green):
    assert np.all(np.abs(const_green.G[:, 0, 0]) < 1e-8)


def test_full_contour_is_real(const_layer):
    gr = ilt_green(const_layer, X, [3.0], [1.0], contour_params=ContourParams(full=True))
    assert gr.imag_residue[0] < 1e-6


def test_against_pde_from_narrow_source(const_layer):
    # narrow Gaussian source at y = 3, sigma = 0.02, solved by the linearized PDE
    dx = 0.005
    xs = np.arange(0, 3001) * dx
    sig = 0.02
    g = lambda x: np.exp(-(x - 3.0) ** 2 / (2 * sig ** 2)) / np.sqrt(2 * np.pi * sig ** 2)
    sol = solve_linearized(const_layer, g=g, T=1.0, dx=dx, dt=0.002, X_dom=15.0, t_out=[1.0])
    gr = ilt_green(const_layer, X, [3.0], [1.0])
    u = np.interp(X, sol.x, sol.u[-1, :, 0])
    G = gr.G[0, 0, :, 0, 0]
    rel = np.trapezoid(np.abs(u - G), X) / np.trapezoid(np.abs(G), X)
    assert rel < 0.02


def test_ilt_apply_matches_heat_kernel(const_layer):
    g = np.exp(-(X - 4.0) ** 2)
    out = ilt_apply(const_layer, X, g[:, None], [1.0])[0, :, 0]
    ref = np.array([np.trapezoid(heat_convection_green(1.0, 1.0, xi, 1.0, X) * g, X) for xi in X])
    assert np.max(np.abs(out - ref)) < 1e-6 * np.abs(ref).max()


def test_burgers_green_real_and_zero_at_boundary(burgers):
    _, _, c = burgers
    gr = ilt_green(c, X[:161], [2.0], [0.5, 2.0], contour_params=ContourParams(full=True))
    G = gr.G[:, 0, :, 0, 0]
    assert np.all(np.abs(G[:, 0]) < 1e-8)
    assert np.all(gr.imag_residue < 1e-6 * np.abs(G).max())


@pytest.fixture(scope="module")
def const_samples(const_layer):
    x = np.arange(0, 401) * 0.05
    return ilt_green(const_layer, x, [0.0, 2.0, 5.0, 10.0], [0.5, 2.0, 10.0, 50.0])


def test_bound_fit_constant_layer(const_samples):
    tpl = BoundTemplate([1.0], L=4.0)
    fit = pointwise_bound_fit(const_samples, tpl)
    assert fit.C < 10
    assert 4.0 <= fit.M <= 16.0
    assert fit.worst_ratio <= 1.0 + 1e-12
    assert tpl.C == fit.C and tpl.M == fit.M
    assert fit.active_counts()["reflected"] == 0


def test_bound_fit_burgers_reflected_sum_empty(burgers):
    from evanslab.timedomain.bounds import bound_summands
    x = np.linspace(0, 20, 41)
    parts = bound_summands([-1.0], x[:, None], 5.0, x[None, :], 4.0, 0.1)
    assert np.all(parts[2] == 0)
