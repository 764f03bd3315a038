"""Linearized evolution u_t = -(A u)_x + (B u_x)_x on the quarter plane x > 0."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..eigen import LinearizedCoefficients, speed_data
from ..errors import CFLViolation

FieldSpec = Union[None, Callable, np.ndarray]


@dataclass
class QuarterPlaneSolution:
    """Snapshots on the grid x_k = k dx, k = 0..N, with Dirichlet data at x = 0.

    ``u`` holds the linearized solution, or the full state for nonlinear runs, in
    which case ``ubar`` is the discrete steady state and ``perturbation`` is u - ubar.
    """
    x: np.ndarray
    t: np.ndarray
    u: np.ndarray                 # (T, X, n)
    g: np.ndarray                 # (X, n)
    h: np.ndarray                 # (T, n)
    kind: str = "linear"
    ubar: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def perturbation(self) -> np.ndarray:
        return self.u if self.ubar is None else self.u - self.ubar

    def norms(self, p) -> np.ndarray:
        """L^p norms in x of the perturbation at each snapshot (trapezoid rule)."""
        mag = np.linalg.norm(self.perturbation, axis=-1)
        if np.isinf(p):
            return mag.max(axis=1)
        return np.trapezoid(mag ** p, self.x, axis=1) ** (1.0 / p)

    def to_csv(self, path, every: int = 1) -> None:
        n = self.u.shape[-1]
        cols = ["t", "x"] + [f"u_{i + 1}" for i in range(n)]
        rows = []
        for k in range(0, self.t.size, every):
            rows.append(np.column_stack([np.full(self.x.size, self.t[k]), self.x, self.perturbation[k]]))
        with open(path, "w") as fh:
            fh.write(f"# kind={self.kind}\n")
            fh.write(",".join(cols) + "\n")
            np.savetxt(fh, np.vstack(rows), delimiter=",", fmt="%.12g")


def field_values(g: FieldSpec, x, n: int) -> np.ndarray:
    if g is None:
        return np.zeros((x.size, n))
    vals = g(x) if callable(g) else np.asarray(g, dtype=float)
    return np.asarray(vals, dtype=float).reshape(x.size, n)


def boundary_values(h: FieldSpec, t, n: int) -> np.ndarray:
    t = np.atleast_1d(t)
    if h is None:
        return np.zeros((t.size, n))
    return np.asarray(h(t), dtype=float).reshape(t.size, n)


def default_domain(coeffs: LinearizedCoefficients, T: float) -> float:
    a = speed_data(coeffs)[0]
    return float(max(40.0, 4.0 * max(a.max(), 0.0) * T))


def upwind_weight(Af, Bf, dx):
    """Artificial-viscosity weight |A| max(0, 1 - 2/Pe) at each interface."""
    ev, R = np.linalg.eig(Af)
    absA = np.real(R @ (np.abs(ev)[..., None] * np.linalg.inv(R)))
    bmin = np.min(np.linalg.eigvals(Bf).real, axis=-1)
    pe = np.max(np.abs(ev), axis=-1) * dx / bmin
    w = np.where(pe > 2, 1 - 2 / np.maximum(pe, 2), 0.0)
    return w[:, None, None] * absA


def outgoing_projector(A) -> np.ndarray:
    """Spectral projector of A onto its positive-speed eigenvectors."""
    ev, R = np.linalg.eig(np.asarray(A, dtype=float))
    return np.real(R @ np.diag((ev.real > 0).astype(float)) @ np.linalg.inv(R))


def assemble_operator(coeffs: LinearizedCoefficients, dx: float, N: int):
    """Sparse L_h on unknowns u_1..u_N and the block coupling row 1 to u_0.

    Interface fluxes A(u_i + u_{i+1})/2 - D(u_{i+1} - u_i)/2 and B(u_{i+1} - u_i)/dx;
    the ghost node u_{N+1} = P u_N closes the far end, with P the projector onto
    outgoing characteristics, so incoming components are held at zero.
    """
    n = coeffs.n
    xf = (np.arange(N + 1) + 0.5) * dx          # interfaces i + 1/2, i = 0..N
    Af = coeffs.A(xf)
    Bf = coeffs.B(xf)
    Df = upwind_weight(Af, Bf, dx)
    lo_f, hi_f = slice(0, N), slice(1, N + 1)    # interface i - 1/2 and i + 1/2 for row i
    lower = (Af[lo_f] + Df[lo_f]) / (2 * dx) + Bf[lo_f] / dx ** 2
    upper = (-Af[hi_f] + Df[hi_f]) / (2 * dx) + Bf[hi_f] / dx ** 2
    diag = (-Af[hi_f] - Df[hi_f] + Af[lo_f] - Df[lo_f]) / (2 * dx) - (Bf[hi_f] + Bf[lo_f]) / dx ** 2
    diag[-1] += upper[-1] @ outgoing_projector(Af[-1])
    bc = lower[0].copy()
    blocks = sp.block_diag(list(diag), format="csr")
    off_u = sp.block_diag(list(upper[:-1]), format="csr")
    off_l = sp.block_diag(list(lower[1:]), format="csr")
    L = blocks + _shift(off_u, n, N, +1) + _shift(off_l, n, N, -1)
    return L.tocsc(), bc, Af


def _shift(blk, n, N, k):
    # place an (N-1)n block-diagonal matrix on the k-th block off-diagonal
    pad = sp.csr_matrix((n, (N - 1) * n))
    corner = sp.csr_matrix((N * n, n))
    if k > 0:
        return sp.hstack([corner, sp.vstack([blk, pad])]).tocsr()
    return sp.hstack([sp.vstack([pad, blk]), corner]).tocsr()


def solve_linearized(coeffs: LinearizedCoefficients, g: FieldSpec = None, h: FieldSpec = None,
                     T: float = 1.0, scheme: str = "cn", dx: float = 0.02, dt: float = 0.01,
                     X_dom: Optional[float] = None, t_out=None, startup: int = 4) -> QuarterPlaneSolution:
    """Method-of-lines solve with Dirichlet data u(0, t) = h(t).

    ``scheme``: 'cn' (Crank-Nicolson after ``startup`` implicit-Euler half steps),
    'be' (implicit Euler), or 'imex' (explicit convection, Crank-Nicolson diffusion,
    subject to |a| dt / dx <= 1).
    """
    n = coeffs.n
    X_dom = default_domain(coeffs, T) if X_dom is None else float(X_dom)
    N = int(round(X_dom / dx))
    x = np.arange(N + 1) * dx
    n_steps = max(1, int(round(T / dt)))
    dt = T / n_steps
    t_out = np.linspace(0.0, T, 11) if t_out is None else np.atleast_1d(np.asarray(t_out, dtype=float))
    out_steps = np.clip(np.rint(t_out / dt).astype(int), 0, n_steps)

    L, bc, Af = assemble_operator(coeffs, dx, N)
    I = sp.identity(N * n, format="csc")
    if scheme == "imex":
        speed = max(float(np.max(np.abs(np.linalg.eigvals(Af)))), 1e-300)
        if speed * dt / dx > 1.0:
            raise CFLViolation(f"CFL number {speed * dt / dx:.3f} > 1")
        no_conv = sp.csc_matrix(assemble_operator(_diffusion_only(coeffs), dx, N)[0])
        conv = L - no_conv
        lu = splu((I - 0.5 * dt * no_conv).tocsc())
    elif scheme in ("cn", "be"):
        lu_half = splu((I - 0.5 * dt * L).tocsc())
        lu_full = splu((I - dt * L).tocsc()) if scheme == "be" else None
    else:
        raise ValueError(f"unknown scheme {scheme!r}")

    u0 = field_values(g, x, n)
    hb = lambda s: boundary_values(h, s, n)[0]
    v = u0[1:].ravel().copy()
    snaps = np.empty((out_steps.size, N + 1, n))
    hs = np.empty((out_steps.size, n))

    def record(step, v, hval):
        for k in np.where(out_steps == step)[0]:
            snaps[k, 0] = hval
            snaps[k, 1:] = v.reshape(N, n)
            hs[k] = hval

    def src(s):
        r = np.zeros(N * n)
        r[:n] = bc @ hb(s)
        return r

    record(0, v, hb(0.0) if h is not None else u0[0])
    half_steps = min(startup, 2 * n_steps) if scheme == "cn" else 0
    t = 0.0
    for step in range(1, n_steps + 1):
        if scheme == "be":
            v = lu_full.solve(v + dt * src(t + dt))
        elif scheme == "imex":
            rhs = v + dt * (conv @ v) + 0.5 * dt * (no_conv @ v) + dt * 0.5 * (src(t) + src(t + dt))
            v = lu.solve(rhs)
        elif 2 * step <= half_steps:
            for s in (t + 0.5 * dt, t + dt):
                v = lu_half.solve(v + 0.5 * dt * src(s))
        else:
            v = lu_half.solve(v + 0.5 * dt * (L @ v) + 0.5 * dt * (src(t) + src(t + dt)))
        t = step * dt
        record(step, v, hb(t))
    return QuarterPlaneSolution(x=x, t=out_steps * dt, u=snaps, g=u0, h=hs, kind="linear",
                                meta={"scheme": scheme, "dx": dx, "dt": dt, "X_dom": X_dom})


def _diffusion_only(coeffs: LinearizedCoefficients) -> LinearizedCoefficients:
    zero = np.zeros((coeffs.n, coeffs.n))

    class _D:
        n = coeffs.n
        A = staticmethod(lambda x: np.broadcast_to(zero, np.shape(x) + zero.shape))
        B = staticmethod(coeffs.B)
    return _D()
