"""Linearized coefficients, first-order eigenvalue systems and limiting mode data."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import SingularViscosity, SplittingFailure
from .model import SystemModel
from .profile import Profile

HYPERBOLICITY_TOL = 1e-8


class LinearizedCoefficients:
    """A(x), B(x) and their x-derivatives along a profile.

    Between nodes A and B are cubic Hermite interpolants of the nodal values and
    nodal derivatives; A' and B' are the exact derivatives of those interpolants, so
    the operator -(Au)' + (Bu')' is evaluated consistently. Beyond X_max the limits
    A+, B+ are used.
    """

    def __init__(self, x, A, dA, B, dB, A_plus, B_plus, X_max, theta=1.0, constant=False,
                 model_name=""):
        self.x = np.asarray(x, dtype=float)
        self.n = A_plus.shape[0]
        self.A_nodes = np.asarray(A, dtype=float)
        self.B_nodes = np.asarray(B, dtype=float)
        self.A_plus = np.asarray(A_plus, dtype=float)
        self.B_plus = np.asarray(B_plus, dtype=float)
        self.X_max = float(X_max)
        self.theta = float(theta)
        self.constant = bool(constant)
        self.model_name = model_name
        if not constant:
            self._A = CubicHermiteSpline(self.x, self.A_nodes, dA, axis=0)
            self._B = CubicHermiteSpline(self.x, self.B_nodes, dB, axis=0)
            self._dA = self._A.derivative()
            self._dB = self._B.derivative()
        self.Binv_plus = _safe_inv(self.B_plus)

    @classmethod
    def constant_coefficients(cls, A, B, X_max=1.0, name=""):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        x = np.array([0.0, X_max])
        stack = np.stack([A, A])
        return cls(x, stack, np.zeros_like(stack), np.stack([B, B]), np.zeros_like(stack),
                   A, B, X_max, constant=True, model_name=name)

    def _eval(self, spline, limit, x, deriv=False):
        x = np.asarray(x, dtype=float)
        if self.constant:
            val = np.zeros_like(limit) if deriv else limit
            return np.broadcast_to(val, x.shape + limit.shape).copy()
        out = np.empty(x.shape + limit.shape)
        inside = x <= self.X_max
        out[~inside] = 0.0 if deriv else limit
        if np.any(inside):
            out[inside] = spline(np.clip(x[inside], 0.0, None))
        return out

    def A(self, x):
        return self._eval(getattr(self, "_A", None), self.A_plus, x)

    def dA(self, x):
        return self._eval(getattr(self, "_dA", None), self.A_plus, x, deriv=True)

    def B(self, x):
        return self._eval(getattr(self, "_B", None), self.B_plus, x)

    def dB(self, x):
        return self._eval(getattr(self, "_dB", None), self.B_plus, x, deriv=True)

    # first-order systems, split as M0(x) + lambda * M1(x)
    def system_parts(self, x):
        """(M0, M1) with system matrix = M0 + lam*M1; accepts scalar or array x."""
        n = self.n
        A, dA, B, dB = self.A(x), self.dA(x), self.B(x), self.dB(x)
        Binv = _safe_inv(B)
        shape = np.shape(x) + (2 * n, 2 * n)
        M0 = np.zeros(shape)
        M1 = np.zeros(shape)
        M0[..., :n, n:] = np.eye(n)
        M0[..., n:, :n] = Binv @ dA
        M0[..., n:, n:] = Binv @ (A - dB)
        M1[..., n:, :n] = Binv
        return M0, M1

    def adjoint_parts(self, x):
        n = self.n
        A, B, dB = self.A(x), self.B(x), self.dB(x)
        Binv = _safe_inv(B)
        shape = np.shape(x) + (2 * n, 2 * n)
        M0 = np.zeros(shape)
        M1 = np.zeros(shape)
        M0[..., n:, :n] = np.eye(n)
        M0[..., n:, n:] = -(A + dB) @ Binv
        M1[..., :n, n:] = Binv
        return M0, M1

    def limit_parts(self):
        return self.system_parts(np.array(self.X_max + 1.0))

    def coupling(self, x):
        """S(x) = [[-A, B], [-B, 0]], the matrix of the bilinear duality pairing."""
        n = self.n
        A, B = self.A(x), self.B(x)
        S = np.zeros(np.shape(x) + (2 * n, 2 * n))
        S[..., :n, :n] = -A
        S[..., :n, n:] = B
        S[..., n:, :n] = -B
        return S


def _safe_inv(B):
    try:
        cond = np.linalg.cond(B)
    except np.linalg.LinAlgError:
        cond = np.inf
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise SingularViscosity("B(x) is not invertible within tolerance")
    return np.linalg.inv(B)


def linearize(model: SystemModel, profile: Profile) -> LinearizedCoefficients:
    """Tabulate A = df(u) - dB(u)(., u') and B = B(u) on the profile grid."""
    n = model.n
    A_plus = model.df(model.u_plus)
    B_plus = model.B(model.u_plus)
    theta = profile.theta if np.isfinite(profile.theta) and profile.theta > 0 else 1.0
    if profile.constant:
        return LinearizedCoefficients(profile.x[[0, -1]], np.stack([A_plus, A_plus]),
                                      np.zeros((2, n, n)), np.stack([B_plus, B_plus]),
                                      np.zeros((2, n, n)), A_plus, B_plus, profile.X_max,
                                      theta=theta, constant=True, model_name=model.name)
    u, du = profile.u, profile.du
    d2u = profile.meta["d2u"]
    M = u.shape[0]
    A = np.empty((M, n, n))
    dA = np.empty((M, n, n))
    B = np.empty((M, n, n))
    dB = np.empty((M, n, n))
    for i in range(M):
        ui, vi, wi = u[i], du[i], d2u[i]
        speed = np.linalg.norm(vi)
        dBt = model.dB(ui)
        A[i] = model.df(ui) - np.einsum("ijk,j->ik", dBt, vi)
        B[i] = model.B(ui)
        dB[i] = np.einsum("ijk,k->ij", dBt, vi)
        if speed == 0.0:
            dA[i] = 0.0
            continue
        e = vi / speed
        h = 1e-5
        ddf = (model.df(ui + h * e) - model.df(ui - h * e)) / (2 * h) * speed
        if model.constant_viscosity:
            dA[i] = ddf
        else:
            ddB = (model.dB(ui + h * e) - model.dB(ui - h * e)) / (2 * h) * speed
            dA[i] = ddf - np.einsum("ijk,j->ik", ddB, vi) - np.einsum("ijk,j->ik", dBt, wi)
    if model.constant_viscosity:
        B[:] = B_plus
        dB[:] = 0.0
    return LinearizedCoefficients(profile.x, A, dA, B, dB, A_plus, B_plus, profile.X_max,
                                  theta=theta, model_name=model.name)


def system_matrix(coeffs: LinearizedCoefficients, lam: complex, x: float) -> np.ndarray:
    """Matrix of W' = A(lam, x) W for W = (w, w'), from (Bw')' - (Aw)' = lam w."""
    M0, M1 = coeffs.system_parts(np.asarray(x, dtype=float))
    return M0 + lam * M1


def adjoint_matrix(coeffs: LinearizedCoefficients, lam: complex, x: float) -> np.ndarray:
    """Matrix of the row flow Z' = Z A~, chosen so that Z S W is constant."""
    M0, M1 = coeffs.adjoint_parts(np.asarray(x, dtype=float))
    return M0 + lam * M1


def limit_matrix(coeffs: LinearizedCoefficients, lam: complex) -> np.ndarray:
    M0, M1 = coeffs.limit_parts()
    return M0 + lam * M1


@dataclass
class ModeSet:
    lam: complex
    mu: np.ndarray            # (2n,) eigenvalues of the limiting matrix
    V: np.ndarray             # (2n, 2n) right eigenvectors as columns
    Vdual: np.ndarray         # rows, Vdual @ V = I
    stable: np.ndarray        # bool mask Re mu < 0
    fast: np.ndarray          # bool mask, continuation of the eigenvalues of B+^-1 A+
    slow_index: np.ndarray    # for slow modes the speed index j, -1 for fast modes
    gamma: np.ndarray
    S: np.ndarray
    speeds: np.ndarray        # a_j+ increasing
    l: np.ndarray             # rows, l_j . r_k = delta
    r: np.ndarray             # columns
    beta: np.ndarray

    def slow_expansion(self):
        """-lam/a_j + lam^2 beta_j / a_j^3 for each j."""
        a = self.speeds
        return -self.lam / a + self.lam ** 2 * self.beta / a ** 3

    @property
    def n(self) -> int:
        return self.speeds.size


def speed_data(coeffs: LinearizedCoefficients):
    """(a_j, l_j, r_j, beta_j) of A+ with l_j r_k = delta and beta_j = l_j B+ r_j."""
    ev, R = np.linalg.eig(coeffs.A_plus)
    order = np.argsort(ev.real)
    a = ev.real[order]
    R = np.real(R[:, order])
    L = np.linalg.inv(R)
    beta = np.einsum("ji,ik,kj->j", L, coeffs.B_plus, R)
    return a, L, R, beta


def _eig(M):
    mu, V = np.linalg.eig(M)
    return mu, V


def mode_set(coeffs: LinearizedCoefficients, lam: complex, n_steps: int = 64,
             tol: float = HYPERBOLICITY_TOL, require_splitting: bool = True) -> ModeSet:
    """Eigen-decomposition of the limiting matrix with fast/slow labels.

    Labels are carried by nearest-neighbour continuation along lam*s, s in (0, 1]; at
    the first step the slow eigenvalues are matched to the small-lam expansion.
    """
    n = coeffs.n
    lam = complex(lam)
    a, l, r, beta = speed_data(coeffs)
    gamma, S = np.linalg.eig(coeffs.Binv_plus @ coeffs.A_plus)
    M0, M1 = coeffs.limit_parts()
    mu, V = _eig(M0 + lam * M1)
    stable = mu.real < 0
    labels = _continue_labels(M0, M1, lam, a, beta, gamma, n_steps)
    # labels refer to the eigenvalue list at lam; match to mu ordering
    target, lab = labels
    perm = _match(target, mu)
    label_at_mu = np.empty(2 * n, dtype=int)
    label_at_mu[perm] = lab
    fast = label_at_mu < 0
    slow_index = np.where(fast, -1, label_at_mu)
    if require_splitting and lam != 0:
        centre = np.abs(mu.real) < tol
        if np.any(centre) or np.count_nonzero(stable) != n:
            raise SplittingFailure(f"lam={lam}: stable dimension {np.count_nonzero(stable & ~centre)} != {n}")
    Vdual = np.linalg.inv(V)
    return ModeSet(lam=lam, mu=mu, V=V, Vdual=Vdual, stable=stable, fast=fast,
                   slow_index=slow_index, gamma=gamma, S=S, speeds=a, l=l, r=r, beta=beta)


def _match(ref, new):
    """perm with new[perm[i]] closest to ref[i], greedy on sorted pairwise distances."""
    d = np.abs(ref[:, None] - new[None, :])
    perm = -np.ones(ref.size, dtype=int)
    used = np.zeros(new.size, dtype=bool)
    for flat in np.argsort(d, axis=None):
        i, j = np.unravel_index(flat, d.shape)
        if perm[i] < 0 and not used[j]:
            perm[i] = j
            used[j] = True
    return perm


def _continue_labels(M0, M1, lam, a, beta, gamma, n_steps):
    n = a.size
    if lam == 0:
        mu = np.linalg.eigvals(M0)
        ref = np.concatenate([gamma, np.zeros(n)])
        perm = _match(ref, mu)
        labels = np.concatenate([-np.ones(n, dtype=int), np.arange(n)])
        return mu[perm], labels
    s = np.geomspace(1e-6, 1.0, n_steps)
    lam0 = lam * s[0]
    ref = np.concatenate([gamma.astype(complex), -lam0 / a + lam0 ** 2 * beta / a ** 3])
    labels = np.concatenate([-np.ones(n, dtype=int), np.arange(n)])
    cur = ref
    for si in s:
        mu = np.linalg.eigvals(M0 + lam * si * M1)
        cur = mu[_match(cur, mu)]
    return cur, labels


def consistent_splitting_check(coeffs: LinearizedCoefficients, lam: complex,
                               tol: float = HYPERBOLICITY_TOL):
    """(ok, (dim stable, dim unstable)) for the limiting matrix at lam."""
    mu = np.linalg.eigvals(limit_matrix(coeffs, lam))
    centre = np.abs(mu.real) < tol
    dims = (int(np.count_nonzero((mu.real < 0) & ~centre)), int(np.count_nonzero((mu.real > 0) & ~centre)))
    ok = (not np.any(centre)) and dims[0] == coeffs.n
    return ok, dims


def from_model(model: SystemModel, profile: Optional[Profile] = None) -> LinearizedCoefficients:
    """Convenience: solve the profile if needed and linearize."""
    from .profile import solve_profile
    if profile is None:
        profile = solve_profile(model)
    return linearize(model, profile)
