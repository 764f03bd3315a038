import numpy as np
import pytest

from evanslab.errors import InsufficientDecade
from evanslab.timedomain import BoundTemplate, lp_decay_rates, solve_linearized, zeta_track
from evanslab.timedomain.linear import QuarterPlaneSolution


def _synthetic(t, field):
    x = np.linspace(0, 50, 501)
    u = np.stack([field(x, tt) for tt in t])[..., None]
    return QuarterPlaneSolution(x=x, t=np.asarray(t, dtype=float), u=u, g=u[0], h=np.zeros((len(t), 1)))


def test_zeta_zero_perturbation():
    sol = _synthetic([0.0, 1.0, 5.0], lambda x, t: 0 * x)
    z = zeta_track(sol, BoundTemplate([1.0]))
    assert np.all(z.zeta == 0) and z.sup == 0 and z.flat_tail()


def test_zeta_nondecreasing(const_layer):
    sol = solve_linearized(const_layer, g=lambda x: 0.01 * np.exp(-(x - 3) ** 2), T=10.0, dx=0.05, dt=0.05,
                           X_dom=40.0, t_out=np.linspace(0.0, 10.0, 41))
    z = zeta_track(sol, BoundTemplate([1.0], L=4.0))
    assert np.all(np.diff(z.zeta) >= 0)
    assert np.all(z.snapshot <= z.zeta)
    assert z.t[0] >= 1e-6


def test_zeta_scales_linearly(const_layer):
    sups = []
    for E0 in (0.01, 0.005):
        sol = solve_linearized(const_layer, g=lambda x: E0 * (1 + x) ** -1.5, T=10.0, dx=0.05, dt=0.05,
                               X_dom=40.0, t_out=np.linspace(0.0, 10.0, 21))
        sups.append(zeta_track(sol, BoundTemplate([1.0], L=4.0)).sup)
    assert sups[1] / sups[0] == pytest.approx(0.5, rel=1e-9)


def test_lp_rates_of_heat_profile():
    # a spreading Gaussian of mass one: L^p norms fall like t^-(1/2)(1 - 1/p)
    t = np.geomspace(1.0, 1e3, 40)
    x = np.linspace(-400, 400, 8001)
    u = np.stack([np.exp(-x ** 2 / (4 * (1 + tt))) / np.sqrt(4 * np.pi * (1 + tt)) for tt in t])[..., None]
    sol = QuarterPlaneSolution(x=x, t=t, u=u, g=u[0], h=np.zeros((t.size, 1)))
    rates = lp_decay_rates(sol, (1, 2, np.inf))
    assert rates[1] == pytest.approx(0.0, abs=0.02)
    assert rates[2] == pytest.approx(-0.25, abs=0.02)
    assert rates[np.inf] == pytest.approx(-0.5, abs=0.02)


def test_insufficient_decade():
    sol = _synthetic(np.linspace(0, 10, 11), lambda x, t: np.exp(-x) / (1 + t))
    with pytest.raises(InsufficientDecade):
        lp_decay_rates(sol)
