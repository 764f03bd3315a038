"""Time-domain Green function by inverse Laplace quadrature of the resolvent kernel."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..eigen import LinearizedCoefficients
from ..errors import TruncationFailure
from ..resolvent import GridSweep


@dataclass
class ContourParams:
    """Arc of radius max(r_floor, 2/t) joined to rays at angle pi/2 + arctan(theta2).

    Both pieces are split into Gauss-Legendre panels over which e^{lam t} G_lam turns
    through at most ``panel_phase`` radians.
    """
    theta2: float = 0.5
    r_floor: float = 0.02
    panel_phase: float = 8.0
    order: int = 16
    peak_tol: float = 1e-14
    tail_tol: float = 1e-6
    chunk: int = 256
    h_max: float = 0.05
    full: bool = False
    estimate_error: bool = True

    def radius(self, t: float) -> float:
        return max(self.r_floor, 2.0 / t)

    @property
    def angle(self) -> float:
        return np.pi / 2 + np.arctan(self.theta2)


def _kappa(coeffs: LinearizedCoefficients, lams) -> np.ndarray:
    """max_j |d mu_j / d lam| of the limit system, by first-order perturbation."""
    M0, M1 = coeffs.limit_parts()
    out = np.empty(len(lams))
    for i, lam in enumerate(np.atleast_1d(lams)):
        mu, R = np.linalg.eig(M0 + lam * M1)
        Lt = np.linalg.inv(R)
        out[i] = np.max(np.abs(np.einsum("ij,jk,ki->i", Lt, M1, R)))
    return out


def _panels(a, b, order):
    g, w = np.polynomial.legendre.leggauss(order)
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    s = (0.5 * (b - a))[:, None] * g + (0.5 * (a + b))[:, None]
    return s.ravel(), (0.5 * (b - a))[:, None] * w * np.ones_like(s)


def contour_nodes(coeffs: LinearizedCoefficients, t: float, X: float, params: ContourParams,
                  order: Optional[int] = None, t_phase: Optional[float] = None):
    """Nodes and weights (dlam included) on the upper half of the contour.

    The half runs from lam = r on the real axis, counterclockwise along the arc, then
    out along the ray. ``X`` bounds the x + y range where kernels are needed. The
    radius and ray length come from ``t``; panels are sized for ``t_phase`` >= t so
    the same nodes serve every time in [t, t_phase].
    """
    order = params.order if order is None else order
    tp = t if t_phase is None else max(t, t_phase)
    r = params.radius(t)
    phi = params.angle
    sin_a = np.sin(phi - np.pi / 2)
    kap_arc = float(np.max(_kappa(coeffs, r * np.exp(1j * np.linspace(0, phi, 9)))))
    n_arc = max(1, int(np.ceil(phi * r * (tp + X * kap_arc) / params.panel_phase)))
    edges = np.linspace(0.0, phi, n_arc + 1)
    psi, wpsi = _panels(edges[:-1], edges[1:], order)
    lam_arc = r * np.exp(1j * psi)
    w_arc = 1j * lam_arc * wpsi.ravel()

    # ray length from |e^{lam t}| alone, padded for algebraic growth of the blocks
    rho_end = (np.log(1 / params.peak_tol) + r * t) / (t * sin_a)
    rho_end *= 1 + np.log1p(rho_end / r) / np.log(1 / params.peak_tol)
    edges = [r]
    while edges[-1] < rho_end:
        rho = edges[-1]
        k = float(_kappa(coeffs, [rho * np.exp(1j * phi)])[0])
        step = min(params.panel_phase / (tp + X * k), rho)
        edges.append(min(rho + step, rho_end))
    edges = np.array(edges)
    rho, wrho = _panels(edges[:-1], edges[1:], order)
    e = np.exp(1j * phi)
    lam = np.concatenate([lam_arc, rho * e])
    w = np.concatenate([w_arc, wrho.ravel() * e])
    info = {"t": float(t), "r": float(r), "angle": float(phi), "rho_end": float(rho_end),
            "arc_panels": int(n_arc), "ray_panels": int(edges.size - 1), "nodes": int(lam.size)}
    return lam, w, info


def laplace_invert(coeffs: LinearizedCoefficients, sampler: Callable, t, X: float,
                   params: Optional[ContourParams] = None, diagonal: bool = False):
    """-(1/2 pi i) int_Gamma e^{lam t} F(lam) dlam for a sampler of the resolvent kernel F.

    ``sampler`` maps a 1-d array of lambda to an array with leading axis over lambda.
    ``t`` may be an array of times sharing one contour (keep max/min <= 4 or so).
    With ``diagonal`` the sampler's second axis runs over those times and slice j
    is inverted at t_j only. Returns (values, info) with values of shape (T, ...).
    With ``params.full`` both halves are integrated and the imaginary residue is
    reported; otherwise conjugate symmetry gives the real part directly.
    """
    params = ContourParams() if params is None else params
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    t_lo, t_hi = float(ts.min()), float(ts.max())
    info = {}
    results = []
    orders = [params.order] + ([params.order // 2] if params.estimate_error else [])
    for order in orders:
        lam, w, cinfo = contour_nodes(coeffs, t_lo, X, params, order=order, t_phase=t_hi)
        if order == params.order:
            info.update(cinfo)
        if params.full:
            lam_all = np.concatenate([lam, np.conj(lam)])
            w_all = np.concatenate([w, -np.conj(w)])
        else:
            lam_all, w_all = lam, w
        total = None
        peak = 0.0
        for s in range(0, lam_all.size, params.chunk):
            lc = lam_all[s:s + params.chunk]
            vals = np.asarray(sampler(lc))
            ew = np.exp(np.outer(lc, ts)) * w_all[s:s + params.chunk, None]     # (K, T)
            mag = np.max(np.abs(ew), axis=1) * np.max(np.abs(vals.reshape(lc.size, -1)), axis=1)
            peak = max(peak, float(mag.max()))
            if diagonal:
                contrib = np.einsum("kj,kj...->j...", ew, vals)
            else:
                contrib = np.tensordot(ew, vals, axes=(0, 0))
            total = contrib if total is None else total + contrib
        if order == params.order:
            last = lam[-1:]
            tail = float(np.max(np.abs(np.exp(last * t_lo) * w[-1])) * np.max(np.abs(np.asarray(sampler(last)))))
            info["peak"] = peak
            info["tail"] = tail / peak
            if tail > params.tail_tol * peak:
                raise TruncationFailure(f"contour tail {tail / peak:.2e} of peak at t = {t_lo:g}")
        if params.full:
            value = -total / (2j * np.pi)
        else:
            value = -total.imag / np.pi + 0j
        results.append(value)
    value = results[0]
    scale = float(np.max(np.abs(value.real))) or 1.0
    info["imag_residue"] = float(np.max(np.abs(value.imag))) / scale
    info["error"] = float(np.max(np.abs(results[1].real - value.real))) / scale if len(results) > 1 else float("nan")
    return value.real, info


@dataclass
class GreenReconstruction:
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    G: np.ndarray          # (T, Y, X, n, n)
    block: str = "G"
    error: np.ndarray = field(default_factory=lambda: np.zeros(0))
    imag_residue: np.ndarray = field(default_factory=lambda: np.zeros(0))
    contours: list = field(default_factory=list)


def _grid_indices(x, y):
    x = np.asarray(x, dtype=float)
    dx = x[1] - x[0]
    if abs(x[0]) > 1e-12 or np.max(np.abs(np.diff(x) - dx)) > 1e-9 * dx:
        raise ValueError("x must be a uniform grid starting at 0")
    jy = np.rint(np.asarray(y, dtype=float) / dx).astype(int)
    if np.max(np.abs(jy * dx - y)) > 1e-9:
        raise ValueError("y values must lie on the x grid")
    return float(dx), jy


_BLOCKS = {"G": (0, 0), "Gy": (0, 1), "Gx": (1, 0), "Gxy": (1, 1)}


def ilt_green(coeffs: LinearizedCoefficients, x, y, t, contour_params: Optional[ContourParams] = None,
              block: str = "G") -> GreenReconstruction:
    """G(x, t; y) (or another block of the kernel) on a uniform x grid from 0.

    ``y`` must lie on the x grid; ``t`` may be a scalar or array.
    """
    params = ContourParams() if contour_params is None else contour_params
    x = np.asarray(x, dtype=float)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts <= 0):
        raise ValueError("t must be positive")
    dx, jy = _grid_indices(x, y)
    n = coeffs.n
    bi, bj = _BLOCKS[block]
    rows = slice(bi * n, (bi + 1) * n)
    cols = slice(bj * n, (bj + 1) * n)
    x_last = max(x[-1], y.max())
    X = x[-1] + y.max()

    def sampler(lams):
        sweep = GridSweep(coeffs, lams, dx, x_last, h_max=params.h_max)
        return np.stack([sweep.blocks_at(j, x.size)[:, :, rows, cols] for j in jy], axis=1)

    out = np.empty((ts.size, y.size, x.size, n, n))
    errs, imags, infos = [], [], []
    for i, tt in enumerate(ts):
        vals, info = laplace_invert(coeffs, sampler, tt, X, params)
        out[i] = vals[0]
        errs.append(info["error"])
        imags.append(info["imag_residue"])
        infos.append(info)
    return GreenReconstruction(x=x, y=y, t=ts, G=out, block=block, error=np.array(errs),
                               imag_residue=np.array(imags), contours=infos)


def ilt_apply(coeffs: LinearizedCoefficients, x, g_values, t, contour_params: Optional[ContourParams] = None,
              column: str = "G") -> np.ndarray:
    """int_0^inf G(x, t; y) g(y) dy on the grid (trapezoid in y), shape (T, X, n).

    ``g_values`` has shape (X, n) on the same grid; ``column='Gy'`` uses G_y instead.
    """
    params = ContourParams() if contour_params is None else contour_params
    x = np.asarray(x, dtype=float)
    dx, _ = _grid_indices(x, [0.0])
    g = np.asarray(g_values, dtype=float).reshape(x.size, -1)
    wts = np.full(x.size, dx)
    wts[[0, -1]] *= 0.5
    v = g * wts[:, None]
    nz = np.nonzero(np.any(v != 0, axis=1))[0]
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    n = coeffs.n
    if nz.size == 0:
        return np.zeros((ts.size, x.size, n))
    X = x[-1] + x[nz[-1]]

    def sampler(lams):
        sweep = GridSweep(coeffs, lams, dx, x[-1], h_max=params.h_max)
        return sweep.apply(v[: nz[-1] + 1], x.size, column)[:, :, :n]

    return np.stack([laplace_invert(coeffs, sampler, tt, X, params)[0][0] for tt in ts])
