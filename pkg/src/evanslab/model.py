"""Conservation-law systems u_t + f(u)_x = (B(u) u_x)_x and their structural checks."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import NonDiagonalizableSpeeds

FD_STEP = 1e-5
_SPEED_TOL = 1e-8

Array = np.ndarray


def _fd_jacobian(func, u, h=FD_STEP):
    u = np.asarray(u, dtype=float)
    cols = []
    for k in range(u.size):
        e = np.zeros_like(u)
        e[k] = h
        cols.append((np.asarray(func(u + e)) - np.asarray(func(u - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class SystemModel:
    """A strictly parabolic system on the half line together with its end states.

    ``dviscosity(u)`` returns the array ``dB[i, j, k] = dB_ij/du_k``; the bilinear
    map of the linearization is ``dB(u)(v, w)_i = sum_jk dB[i, j, k] v_k w_j``.
    Missing derivatives fall back to central differences.
    """

    name: str
    n: int
    flux: Callable[[Array], Array]
    viscosity: Callable[[Array], Array]
    u_plus: Array
    u_zero: Array
    dflux: Optional[Callable[[Array], Array]] = None
    dviscosity: Optional[Callable[[Array], Array]] = None
    constant_viscosity: bool = False
    spec: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "u_plus", np.atleast_1d(np.asarray(self.u_plus, dtype=float)))
        object.__setattr__(self, "u_zero", np.atleast_1d(np.asarray(self.u_zero, dtype=float)))
        if self.u_plus.shape != (self.n,) or self.u_zero.shape != (self.n,):
            raise ValueError("end states must have length n")

    def f(self, u):
        return np.atleast_1d(np.asarray(self.flux(np.asarray(u, dtype=float)), dtype=float))

    def df(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.dflux is not None:
            return np.atleast_2d(np.asarray(self.dflux(u), dtype=float))
        return _fd_jacobian(self.f, u)

    def B(self, u):
        return np.atleast_2d(np.asarray(self.viscosity(np.atleast_1d(np.asarray(u, dtype=float))), dtype=float))

    def dB(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self.constant_viscosity:
            return np.zeros((self.n, self.n, self.n))
        if self.dviscosity is not None:
            return np.asarray(self.dviscosity(u), dtype=float).reshape(self.n, self.n, self.n)
        return _fd_jacobian(self.B, u)

    def profile_rhs(self, u):
        """u' = B(u)^{-1} (f(u) - f(u+)), the first integral of the stationary equation."""
        return np.linalg.solve(self.B(u), self.f(u) - self.f(self.u_plus))

    def replace(self, **changes) -> "SystemModel":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class HypothesisReport:
    h1_pass: bool
    min_re_sigma_B: float
    h2_pass: bool
    speeds: list
    h3_pass: bool
    theta: float
    k_grid: list
    h4_note: str = "assumed (uniqueness of the layer is not machine-checkable)"
    evans_at_zero: Optional[complex] = None

    @property
    def all_pass(self) -> bool:
        return self.h1_pass and self.h2_pass and self.h3_pass

    def to_dict(self) -> dict:
        d0 = self.evans_at_zero
        return {
            "h1_pass": self.h1_pass,
            "min_re_sigma_B": self.min_re_sigma_B,
            "h2_pass": self.h2_pass,
            "speeds": [float(s) for s in self.speeds],
            "h3_pass": self.h3_pass,
            "theta": self.theta,
            "k_range": [min(self.k_grid), max(self.k_grid)] if self.k_grid else [],
            "k_points": len(self.k_grid),
            "h4": self.h4_note,
            "evans_at_zero": None if d0 is None else [d0.real, d0.imag],
            "all_pass": self.all_pass,
        }


def default_k_grid() -> np.ndarray:
    return np.logspace(-2, np.log10(50.0), 200)


def characteristic_speeds(model: SystemModel, tol: float = _SPEED_TOL) -> np.ndarray:
    """Sorted eigenvalues a_1+ < ... < a_n+ of df(u+).

    Raises NonDiagonalizableSpeeds for complex or repeated eigenvalues.
    """
    ev = np.linalg.eigvals(model.df(model.u_plus))
    scale = max(1.0, float(np.max(np.abs(ev))))
    if np.any(np.abs(ev.imag) > tol * scale):
        raise NonDiagonalizableSpeeds(f"complex characteristic speeds {ev}")
    speeds = np.sort(ev.real)
    if speeds.size > 1 and np.min(np.diff(speeds)) <= tol * scale:
        raise NonDiagonalizableSpeeds(f"repeated characteristic speeds {speeds}")
    return speeds


def check_hypotheses(model: SystemModel, k_grid=None, margin: float = 1e-3) -> HypothesisReport:
    """Numerically check (H1)-(H3) at u+; (H4) is recorded as an assumption."""
    k_grid = default_k_grid() if k_grid is None else np.asarray(k_grid, dtype=float)
    if k_grid.size == 0:
        raise ValueError("k_grid must be nonempty")
    absk = np.abs(k_grid)
    if not (np.any(absk <= 1.0) and np.any(absk >= 10.0)):
        raise ValueError("k_grid must contain both |k| <= 1 and |k| >= 10 samples")

    Bp = model.B(model.u_plus)
    min_re = float(np.min(np.linalg.eigvals(Bp).real))
    h1 = min_re > 0

    speeds = characteristic_speeds(model)
    h2 = bool(np.all(np.abs(speeds) > _SPEED_TOL))

    Ap = model.df(model.u_plus)
    ratios = []
    for k in k_grid:
        if k == 0:
            continue
        sym = -1j * k * Ap - k * k * Bp
        ratios.append(-np.max(np.linalg.eigvals(sym).real) / (k * k))
    theta_raw = float(np.min(ratios))
    theta = theta_raw * (1.0 - margin) if theta_raw > 0 else theta_raw
    h3 = theta > 0
    return HypothesisReport(
        h1_pass=bool(h1),
        min_re_sigma_B=min_re,
        h2_pass=h2,
        speeds=list(speeds),
        h3_pass=bool(h3),
        theta=theta,
        k_grid=[float(k) for k in k_grid],
    )


# --------------------------------------------------------------------------
# builtin families


def burgers(u_plus: float, u_zero: float, name: str = "burgers") -> SystemModel:
    return SystemModel(
        name=name,
        n=1,
        flux=lambda u: 0.5 * u**2,
        dflux=lambda u: np.array([[u[0]]]),
        viscosity=lambda u: np.eye(1),
        u_plus=[u_plus],
        u_zero=[u_zero],
        constant_viscosity=True,
        spec={"name": name, "n": 1, "flux": "burgers", "viscosity": [[1.0]],
              "u_plus": [u_plus], "u_zero": [u_zero]},
    )


def constant_scalar(a: float = 1.0, b: float = 1.0, u_plus: float = 0.0,
                    u_zero: Optional[float] = None, name: str = "constant_scalar") -> SystemModel:
    u_zero = u_plus if u_zero is None else u_zero
    return SystemModel(
        name=name,
        n=1,
        flux=lambda u: a * u,
        dflux=lambda u: np.array([[a]]),
        viscosity=lambda u: np.array([[b]]),
        u_plus=[u_plus],
        u_zero=[u_zero],
        constant_viscosity=True,
        spec={"name": name, "n": 1, "flux": {"polynomial": [[[[1], a]]]},
              "viscosity": [[b]], "u_plus": [u_plus], "u_zero": [u_zero]},
    )


def _coupled_flux(c):
    def f(u):
        return np.array([0.5 * u[0] ** 2 + c * u[1], c * u[0] + 0.5 * u[1] ** 2])

    def df(u):
        return np.array([[u[0], c], [c, u[1]]])

    return f, df


def stable_manifold_point(model: SystemModel, distance: float, branch: int = 1,
                          seed: float = 1e-6) -> np.ndarray:
    """Point at ``distance`` from u+ on the (one-dimensional) stable manifold of u+."""
    J = np.linalg.solve(model.B(model.u_plus), model.df(model.u_plus))
    ev, V = np.linalg.eig(J)
    stable = np.where(ev.real < 0)[0]
    if stable.size != 1:
        raise ValueError("stable_manifold_point needs a one-dimensional stable manifold")
    v = np.real(V[:, stable[0]])
    v /= np.linalg.norm(v)
    y0 = model.u_plus + branch * seed * v

    def hit(x, y):
        return np.linalg.norm(y - model.u_plus) - distance

    hit.terminal = True
    sol = solve_ivp(lambda x, y: model.profile_rhs(y), (0.0, -200.0), y0, method="DOP853",
                    rtol=1e-12, atol=1e-14, events=hit)
    if not sol.t_events[0].size:
        raise ValueError("stable manifold never reaches the requested distance")
    return sol.y_events[0][0]


def coupled_burgers(c: float = 0.25, u_plus=(1.0, -1.0), amplitude: float = 0.05,
                    name: str = "coupled_burgers") -> SystemModel:
    """f(u) = (u1^2/2 + c u2, c u1 + u2^2/2), B = I.

    u0 is placed on the stable manifold of u+ at relative distance ``amplitude``.
    """
    f, df = _coupled_flux(c)
    base = SystemModel(name=name, n=2, flux=f, dflux=df, viscosity=lambda u: np.eye(2),
                       u_plus=list(u_plus), u_zero=list(u_plus), constant_viscosity=True)
    u0 = stable_manifold_point(base, amplitude * float(np.linalg.norm(u_plus)))
    spec = {
        "name": name, "n": 2,
        "flux": {"polynomial": [
            [[[2, 0], 0.5], [[0, 1], c]],
            [[[1, 0], c], [[0, 2], 0.5]],
        ]},
        "viscosity": [[1.0, 0.0], [0.0, 1.0]],
        "u_plus": list(u_plus), "u_zero": [float(v) for v in u0],
    }
    return base.replace(u_zero=u0, spec=spec)


def builtin_models() -> list[SystemModel]:
    return [
        burgers(-1.0, -np.tanh(0.5), name="burgers_outflow"),
        burgers(1.0, 0.5, name="burgers_inflow"),
        burgers(1.0, 1.0, name="burgers_constant"),
        constant_scalar(1.0, 1.0, 0.0, name="constant_scalar"),
        constant_scalar(-1.0, 1.0, 0.0, 0.5, name="constant_scalar_decaying"),
        coupled_burgers(),
    ]


def get_builtin(name: str) -> SystemModel:
    for m in builtin_models():
        if m.name == name:
            return m
    raise KeyError(f"unknown builtin model {name!r}")


# --------------------------------------------------------------------------
# JSON documents


def _polynomial_flux(terms_per_component, n):
    terms = [[(np.asarray(mi, dtype=int), float(c)) for mi, c in comp] for comp in terms_per_component]
    if len(terms) != n:
        raise ValueError("polynomial flux needs one term list per component")

    def f(u):
        return np.array([sum(c * np.prod(u**mi) for mi, c in comp) for comp in terms])

    def df(u):
        J = np.zeros((n, n))
        for i, comp in enumerate(terms):
            for mi, c in comp:
                for k in range(n):
                    if mi[k] == 0:
                        continue
                    m2 = mi.copy()
                    m2[k] -= 1
                    J[i, k] += c * mi[k] * np.prod(u**m2)
        return J

    return f, df


def model_from_dict(doc: dict) -> SystemModel:
    name = doc.get("name", "model")
    n = int(doc["n"])
    flux = doc["flux"]
    if isinstance(flux, str):
        builtin = {
            "burgers": lambda: burgers(doc["u_plus"][0], doc["u_zero"][0], name=name),
        }
        if flux in builtin:
            m = builtin[flux]()
            visc = np.asarray(doc.get("viscosity", [[1.0]]), dtype=float)
            return m.replace(viscosity=lambda u, V=visc: V, spec=doc)
        try:
            m = get_builtin(flux)
        except KeyError:
            raise ValueError(f"unknown builtin flux {flux!r}") from None
        return m.replace(name=name, u_plus=np.asarray(doc.get("u_plus", m.u_plus), float),
                         u_zero=np.asarray(doc.get("u_zero", m.u_zero), float), spec=doc)
    if isinstance(flux, dict) and "polynomial" in flux:
        f, df = _polynomial_flux(flux["polynomial"], n)
    else:
        raise ValueError("flux must be a builtin id or {'polynomial': ...}")
    visc = np.asarray(doc["viscosity"], dtype=float).reshape(n, n)
    return SystemModel(name=name, n=n, flux=f, dflux=df, viscosity=lambda u, V=visc: V,
                       u_plus=doc["u_plus"], u_zero=doc["u_zero"], constant_viscosity=True,
                       spec=doc)


def load_model(path) -> SystemModel:
    with open(path) as fh:
        doc = json.load(fh)
    return model_from_dict(doc)


def model_to_dict(model: SystemModel) -> dict:
    if model.spec is None:
        raise ValueError(f"model {model.name!r} has no serializable description")
    doc = dict(model.spec)
    doc["name"] = model.name
    doc["u_plus"] = [float(v) for v in model.u_plus]
    doc["u_zero"] = [float(v) for v in model.u_zero]
    return doc
