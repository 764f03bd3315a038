"""Standing boundary-layer profiles by backward integration along the stable manifold."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import BPoly
from scipy.optimize import least_squares

from .errors import BlowUp, NoConnection, TailTooShort
from .model import SystemModel

SEED_DISTANCE = 1e-6
DOMAIN_BOUND = 1e6


@dataclass(frozen=True)
class Profile:
    x: np.ndarray          # (M,)
    u: np.ndarray          # (M, n)
    du: np.ndarray         # (M, n)
    theta: float
    amplitude: float
    X_max: float
    u_plus: np.ndarray
    u_zero: np.ndarray
    constant: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return self.u.shape[1]

    def __call__(self, x):
        """Evaluate u-bar; constant u+ beyond X_max."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape + (self.n,))
        inside = x <= self.X_max
        out[~inside] = self.u_plus
        if np.any(inside):
            out[inside] = self._interp(np.clip(x[inside], 0.0, self.X_max))
        return out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (self.n,))
        inside = x <= self.X_max
        if np.any(inside):
            out[inside] = self._interp_d(np.clip(x[inside], 0.0, self.X_max))
        return out

    # quintic Hermite through u, u', u'' at the nodes
    def _build(self):
        if "_polys" not in self.meta:
            d2 = self.meta["d2u"]
            polys = [BPoly.from_derivatives(self.x, np.stack([self.u[:, i], self.du[:, i], d2[:, i]], axis=1))
                     for i in range(self.n)]
            self.meta["_polys"] = polys
            self.meta["_dpolys"] = [p.derivative() for p in polys]
        return self.meta["_polys"], self.meta["_dpolys"]

    def _interp(self, x):
        polys, _ = self._build()
        return np.stack([p(x) for p in polys], axis=-1)

    def _interp_d(self, x):
        _, dpolys = self._build()
        return np.stack([p(x) for p in dpolys], axis=-1)

    def to_csv(self, path) -> None:
        header = [
            f"# model={self.meta.get('model', '')}",
            f"# X_max={self.X_max!r}",
            f"# theta_prof={self.theta!r}",
            f"# C_prof={self.amplitude!r}",
            f"# u_plus={list(map(float, self.u_plus))}",
            f"# u_zero={list(map(float, self.u_zero))}",
        ]
        cols = ["x"] + [f"u_{i + 1}" for i in range(self.n)] + [f"du_{i + 1}" for i in range(self.n)]
        data = np.column_stack([self.x, self.u, self.du])
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            fh.write(",".join(cols) + "\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def _second_derivative(model: SystemModel, u, du):
    # differentiate B(u) u' = f(u) - f(u+):  B u'' = df u' - (dB u') u'
    d2 = np.empty_like(u)
    for i in range(u.shape[0]):
        B = model.B(u[i])
        dBu = np.einsum("ijk,k->ij", model.dB(u[i]), du[i])
        d2[i] = np.linalg.solve(B, model.df(u[i]) @ du[i] - dBu @ du[i])
    return d2


def linearization_at_plus(model: SystemModel):
    J = np.linalg.solve(model.B(model.u_plus), model.df(model.u_plus))
    ev, V = np.linalg.eig(J)
    return ev, V


def default_x_max(model: SystemModel) -> float:
    ev, _ = linearization_at_plus(model)
    stable = ev.real[ev.real < 0]
    if stable.size == 0:
        return 28.0
    theta_lin = float(np.min(-stable))
    return float(math.ceil(math.log(1e12) / theta_lin))


def _rhs(model):
    return lambda x, y: model.profile_rhs(y)


def _blowup_event(x, y):
    return DOMAIN_BOUND - np.max(np.abs(y))


_blowup_event.terminal = True


def _shoot_one_dim(model, v, gamma, tol, span):
    """Backward shots from u+ +- seed*v; returns (tau*, branch) minimising |u(tau) - u0|."""
    u0 = model.u_zero
    best = None
    for branch in (1.0, -1.0):
        y0 = model.u_plus + branch * SEED_DISTANCE * v

        if model.n == 1:
            def ev(x, y):
                return y[0] - u0[0]
        else:
            def ev(x, y):
                return float(np.dot(y - u0, model.profile_rhs(y)))
        ev.terminal = False

        sol = solve_ivp(_rhs(model), (0.0, -span), y0, method="DOP853", rtol=tol, atol=tol * 1e-4,
                        events=[ev, _blowup_event])
        for t_ev, y_ev in zip(sol.t_events[0], sol.y_events[0]):
            d = float(np.linalg.norm(y_ev - u0))
            if best is None or d < best[0]:
                best = (d, float(t_ev), branch)
    return best


def solve_profile(model: SystemModel, X_max: Optional[float] = None, tol: float = 1e-10,
                  dx: float = 0.01, connection_tol: Optional[float] = None) -> Profile:
    """Boundary layer with u(0) = u0 and u(+inf) = u+.

    The stable manifold of u+ for u' = B(u)^{-1}(f(u) - f(u+)) is seeded at distance
    1e-6 along stable eigen-directions and integrated backward; the backward time at
    which it passes through u0 fixes the translate.
    """
    X_max = default_x_max(model) if X_max is None else float(X_max)
    n = model.n
    itol = max(1e-2 * tol, 1e-13)  # integrator runs tighter than the residual target
    m_points = int(round(X_max / dx)) + 1
    x = np.linspace(0.0, X_max, m_points)
    connection_tol = max(1e3 * tol, 1e-7) if connection_tol is None else connection_tol

    if np.allclose(model.u_zero, model.u_plus, rtol=0, atol=1e-14):
        u = np.tile(model.u_plus, (m_points, 1))
        du = np.zeros_like(u)
        return Profile(x=x, u=u, du=du, theta=1.0, amplitude=0.0, X_max=X_max,
                       u_plus=model.u_plus, u_zero=model.u_zero, constant=True,
                       meta={"model": model.name, "d2u": np.zeros_like(u)})

    ev, V = linearization_at_plus(model)
    stable = np.where(ev.real < 0)[0]
    if stable.size == 0:
        raise NoConnection(f"{model.name}: u+ has no stable directions; only the constant layer exists")
    if np.any(np.abs(ev[stable].imag) > 1e-12):
        raise NoConnection("complex stable eigenvalues are not supported by the shooting solver")
    gammas = ev[stable].real
    Vs = np.real(V[:, stable])
    Vs /= np.linalg.norm(Vs, axis=0)
    span = 60.0 / float(np.min(-gammas)) + 50.0

    if stable.size == 1:
        best = _shoot_one_dim(model, Vs[:, 0], gammas[0], itol, span)
        if best is None or best[0] > connection_tol:
            d = None if best is None else best[0]
            raise NoConnection(f"{model.name}: stable manifold misses u0 (closest distance {d})")
        _, tau, branch = best
        coeffs = np.array([branch * SEED_DISTANCE])
    else:
        tau, coeffs = _shoot_multi(model, Vs, gammas, itol, span, connection_tol)

    # backward segment: x in [0, -tau] is trajectory time tau + x
    y_seed = model.u_plus + Vs @ coeffs
    L_traj = -tau
    inside = x <= L_traj
    t_eval = (tau + x[inside])[::-1]
    sol = solve_ivp(_rhs(model), (0.0, tau), y_seed, method="DOP853", rtol=itol, atol=itol * 1e-4,
                    t_eval=t_eval, events=_blowup_event)
    if sol.status == 1:
        raise BlowUp(f"{model.name}: backward trajectory left |u| < {DOMAIN_BOUND:g}")
    u = np.empty((m_points, n))
    u[inside] = sol.y.T[::-1]
    # beyond the seed: linear stable-manifold approximation, error O(seed^2)
    s = x[~inside] - L_traj
    u[~inside] = model.u_plus + (np.exp(np.outer(s, gammas)) * coeffs) @ Vs.T
    du = np.array([model.profile_rhs(ui) for ui in u])
    d2 = _second_derivative(model, u, du)
    prof = Profile(x=x, u=u, du=du, theta=float("nan"), amplitude=float("nan"), X_max=X_max,
                   u_plus=model.u_plus, u_zero=model.u_zero,
                   meta={"model": model.name, "d2u": d2, "tau": tau, "tol": tol})
    theta, amp = fit_decay(prof)
    return Profile(x=x, u=u, du=du, theta=theta, amplitude=amp, X_max=X_max,
                   u_plus=model.u_plus, u_zero=model.u_zero,
                   meta={"model": model.name, "d2u": d2, "tau": tau, "tol": tol})


def _shoot_multi(model, Vs, gammas, tol, span, connection_tol):
    """k >= 2 stable directions: least squares over (sphere angles, backward time)."""
    k = Vs.shape[1]
    u0 = model.u_zero

    def seed(angles):
        c = np.ones(k)
        for i, a in enumerate(angles):
            c[i] *= np.cos(a)
            c[i + 1:] *= np.sin(a)
        return SEED_DISTANCE * c

    def shoot(p):
        angles, tau = p[:-1], p[-1]
        y0 = model.u_plus + Vs @ seed(angles)
        sol = solve_ivp(_rhs(model), (0.0, tau), y0, method="DOP853", rtol=tol, atol=tol * 1e-4)
        return sol.y[:, -1] - u0

    best = None
    rng = np.random.default_rng(0)
    for _ in range(12):
        angles = rng.uniform(0, 2 * np.pi, k - 1)
        y0 = model.u_plus + Vs @ seed(angles)

        def ev(x, y):
            return float(np.dot(y - u0, model.profile_rhs(y)))

        sol = solve_ivp(_rhs(model), (0.0, -span), y0, method="DOP853", rtol=1e-8, atol=1e-12,
                        events=[ev, _blowup_event])
        for t_ev in sol.t_events[0]:
            res = least_squares(shoot, np.r_[angles, t_ev], x_scale="jac", xtol=1e-14, ftol=1e-14)
            d = float(np.linalg.norm(res.fun))
            if best is None or d < best[0]:
                best = (d, res.x)
    if best is None or best[0] > connection_tol:
        raise NoConnection(f"{model.name}: no stable-manifold trajectory reaches u0")
    p = best[1]
    return float(p[-1]), seed(p[:-1])


def fit_decay(profile: Profile, min_points: int = 20):
    """Fit |u(x) - u+| <= C exp(-theta x) on the tail half, inflating C until it holds."""
    if profile.constant or np.allclose(profile.u, profile.u_plus, atol=0.0):
        return 1.0, 0.0
    x = profile.x
    tail = x >= profile.X_max / 2
    dev = np.linalg.norm(profile.u - profile.u_plus, axis=1)
    usable = tail & (dev > 0)
    if np.count_nonzero(usable) < min_points:
        raise TailTooShort(f"only {np.count_nonzero(usable)} tail points")
    slope, intercept = np.polyfit(x[usable], np.log(dev[usable]), 1)
    theta = float(-slope)
    amp = float(np.exp(intercept))
    ratio = np.max(dev[tail] * np.exp(theta * x[tail])) / amp
    if ratio > 1.0:
        amp *= ratio * (1 + 1e-12)
    return theta, amp


def profile_residual(model: SystemModel, profile: Profile, points: Optional[np.ndarray] = None) -> float:
    """max |B(u)u' - (f(u) - f(u+))|, at the grid nodes unless ``points`` is given.

    Off-node points go through the quintic Hermite interpolant and carry its error too.
    """
    if points is None:
        points = profile.x
    u = profile(points)
    du = profile.derivative(points)
    fp = model.f(model.u_plus)
    res = [np.max(np.abs(model.B(ui) @ dui - (model.f(ui) - fp))) for ui, dui in zip(u, du)]
    return float(np.max(res))
