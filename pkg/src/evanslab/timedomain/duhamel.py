"""Check a simulated solution against the Green-function representation formula.

u(x,t) = int G(x,t;y) g(y) dy + int_0^t G_y(x,t-s;0) B(0) h(s) ds + int_0^t int G_y(x,t-s;y) Q(y,s) dy ds
for u_t - L u = -Q(u)_x; all kernels come from inverse Laplace quadrature.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..eigen import LinearizedCoefficients
from ..resolvent import GridSweep
from .ilt import ContourParams, ilt_apply, laplace_invert
from .linear import QuarterPlaneSolution, boundary_values


def lag_nodes(t: float, tau_min: float, order: int = 10):
    """Gauss-Legendre nodes/weights in the lag tau = t - s over [tau_min, t].

    Panels double in length; consecutive pairs of panels share one contour group.
    Returns a list of (tau, weight) arrays, one entry per group.
    """
    edges = [t]
    while edges[-1] / 2 > tau_min:
        edges.append(edges[-1] / 2)
    edges.append(tau_min)
    edges = np.array(edges[::-1])
    g, w = np.polynomial.legendre.leggauss(order)
    panels = []
    for a, b in zip(edges[:-1], edges[1:]):
        panels.append((0.5 * (b - a) * g + 0.5 * (a + b), 0.5 * (b - a) * w))
    groups = []
    for k in range(0, len(panels), 2):
        chunk = panels[k:k + 2]
        groups.append((np.concatenate([c[0] for c in chunk]), np.concatenate([c[1] for c in chunk])))
    return groups


def duhamel_times(t_check: float, x_min: float = 0.5, b: float = 1.0, order: int = 10) -> np.ndarray:
    """Times s at which a nonlinear run must be sampled for the Q term."""
    taus = np.concatenate([g[0] for g in lag_nodes(t_check, _tau_min(x_min, b, t_check), order)])
    return np.sort(t_check - taus)


def _tau_min(x_min, b, t):
    # G_y(x, tau; .) carries exp(-x^2 / 4 b tau); below this lag it is negligible for x >= x_min
    return min(x_min ** 2 / (4 * b * 30.0), 0.5 * t)


def duhamel_terms(coeffs: LinearizedCoefficients, solution: QuarterPlaneSolution, g=None, h=None,
                  t_check: float = 1.0, model=None, dx: float = 0.05, x_max: float = 20.0,
                  x_min: float = 0.5, params: Optional[ContourParams] = None, order: int = 10):
    """(x, initial term, boundary term, nonlinear term, u) on a coarse grid x <= x_max.

    ``model`` enables the nonlinear term; it needs snapshots at duhamel_times(t_check).
    """
    params = ContourParams(estimate_error=False) if params is None else params
    n = coeffs.n
    stride = int(round(dx / (solution.x[1] - solution.x[0])))
    if stride < 1 or abs(stride * (solution.x[1] - solution.x[0]) - dx) > 1e-9:
        raise ValueError("dx must be a multiple of the solution grid spacing")
    n_x = int(round(x_max / dx)) + 1
    x = np.arange(n_x) * dx
    k = int(np.argmin(np.abs(solution.t - t_check)))
    if abs(solution.t[k] - t_check) > 1e-9:
        raise ValueError(f"solution has no snapshot at t = {t_check}")
    u = solution.perturbation[k, ::stride][:n_x]

    g_vals = solution.g[::stride][:n_x] if g is None else np.asarray(g(x), dtype=float).reshape(n_x, n)
    if solution.ubar is not None and g is None:
        g_vals = (solution.u[0] - solution.ubar)[::stride][:n_x]
    initial = ilt_apply(coeffs, x, g_vals, t_check, params)[0]

    b0 = float(np.max(np.linalg.eigvals(coeffs.B(np.array(0.0))).real))
    groups = lag_nodes(t_check, _tau_min(x_min, b0, t_check), order)
    X = 2 * x[-1]
    boundary = np.zeros((n_x, n))
    if h is not None:
        B0 = coeffs.B(np.array(0.0))

        def sampler(lams):
            sweep = GridSweep(coeffs, lams, dx, x[-1], h_max=params.h_max)
            return sweep.blocks_at(0, n_x)[:, :, :n, n:]

        for taus, wts in groups:
            Gy, _ = laplace_invert(coeffs, sampler, taus, X, params)          # (T, X, n, n)
            hv = boundary_values(h, t_check - taus, n) @ B0.T                 # (T, n)
            boundary += np.einsum("j,jxab,jb->xa", wts, Gy, hv)

    nonlinear = np.zeros((n_x, n))
    if model is not None and solution.ubar is not None:
        from .nonlinear import perturbation_Q
        wy = np.full(n_x, dx)
        wy[[0, -1]] *= 0.5
        for taus, wts in groups:
            Qs = []
            for s in t_check - taus:
                j = int(np.argmin(np.abs(solution.t - s)))
                if abs(solution.t[j] - s) > 1e-9:
                    raise ValueError(f"solution has no snapshot at s = {s:.6g}; use duhamel_times")
                ub = solution.ubar[::stride][:n_x]
                Qs.append(perturbation_Q(model, ub, solution.perturbation[j, ::stride][:n_x]) * wy[:, None])
            Qs = np.array(Qs)

            def sampler(lams, Qs=Qs):
                sweep = GridSweep(coeffs, lams, dx, x[-1], h_max=params.h_max)
                return np.stack([sweep.apply(q, n_x, "Gy")[:, :, :n] for q in Qs], axis=1)

            vals, _ = laplace_invert(coeffs, sampler, taus, X, params, diagonal=True)
            nonlinear += np.einsum("j,jxa->xa", wts, vals)
    return x, initial, boundary, nonlinear, u


def duhamel_residual(linear_green: LinearizedCoefficients, solution: QuarterPlaneSolution, g=None, h=None,
                     t_check: float = 1.0, model=None, x_min: float = 0.5, **kw) -> float:
    """||RHS - u(., t_check)||_inf / ||u||_inf over x in [x_min, x_max].

    Points closer to the boundary than ``x_min`` are skipped: the lag quadrature
    starts at tau_min, below which G_y(x, tau; .) is negligible only for x >= x_min.
    """
    x, initial, boundary, nonlinear, u = duhamel_terms(linear_green, solution, g, h, t_check, model,
                                                       x_min=x_min, **kw)
    rhs = initial + boundary + nonlinear
    keep = x >= x_min
    scale = np.max(np.abs(u[keep]))
    if scale == 0:
        return float(np.max(np.abs(rhs[keep])))
    return float(np.max(np.abs(rhs[keep] - u[keep])) / scale)
