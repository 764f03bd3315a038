"""Fit of the pointwise Green-function bound: exponential, direct and reflected Gaussians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import BoundViolated
from .templates import BoundTemplate

SUMMANDS = ("exponential", "direct", "reflected")


def bound_summands(speeds, x, t, y, M: float, eta: float) -> np.ndarray:
    """The three summands of the bound with C = 1, stacked on a new leading axis."""
    x, t, y = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, t, y)))
    speeds = np.atleast_1d(np.asarray(speeds, dtype=float))
    expo = np.exp(-eta * (np.abs(x - y) + t))
    direct = np.zeros(x.shape)
    for a in speeds:
        direct += np.exp(-(x - y - a * t) ** 2 / (M * t))
    refl = np.zeros(x.shape)
    for ak in speeds[speeds < 0]:
        active = np.abs(ak * t) >= np.abs(y)
        lag = t - np.abs(y / ak)
        for aj in speeds[speeds > 0]:
            refl += np.where(active, np.exp(-(x - aj * lag) ** 2 / (M * t)), 0.0)
    return np.stack([expo, direct / np.sqrt(t), refl / np.sqrt(t)])


@dataclass
class BoundFit:
    C: float
    M: float
    eta: float
    worst_ratio: float
    active: np.ndarray      # index into SUMMANDS per sample
    table: np.ndarray       # C over the (M, eta) trial grid
    M_grid: np.ndarray
    eta_grid: np.ndarray

    def active_counts(self) -> dict:
        return {name: int(np.sum(self.active == i)) for i, name in enumerate(SUMMANDS)}


def pointwise_bound_fit(green_samples, template: BoundTemplate, M_grid=None, eta_grid=None,
                        slack: float = 2.0, C_max: float = 1e6) -> BoundFit:
    """Smallest C making |G| <= C (sum of summands) at every sample, for trial (M, eta).

    ``green_samples`` is a GreenReconstruction (scalar entry used for n = 1, the
    largest |G_ij| otherwise) or a tuple (x, y, t, |G|) of broadcastable arrays.
    Among trial pairs whose C is within ``slack`` of the best, the sharpest is kept:
    largest eta, then smallest M.
    """
    if isinstance(green_samples, tuple):
        x, y, t, G = (np.asarray(v, dtype=float) for v in green_samples)
        x, y, t, G = np.broadcast_arrays(x, y, t, np.abs(G))
    else:
        gs = green_samples
        G = np.max(np.abs(gs.G), axis=(-2, -1))                 # (T, Y, X)
        t, y, x = np.meshgrid(gs.t, gs.y, gs.x, indexing="ij")
    speeds = template.speeds
    b_scale = template.L / 4 if template.L else 1.0
    M_grid = b_scale * np.array([1, 2, 3, 4, 6, 8, 12, 16, 24, 32.0]) if M_grid is None else np.asarray(M_grid)
    eta_grid = np.array([0.01, 0.02, 0.05, 0.1, 0.2, 0.5]) if eta_grid is None else np.asarray(eta_grid)
    if not np.all(np.isfinite(G)):
        raise BoundViolated("non-finite Green samples")
    table = np.empty((M_grid.size, eta_grid.size))
    for i, M in enumerate(M_grid):
        for j, eta in enumerate(eta_grid):
            phi = bound_summands(speeds, x, t, y, M, eta).sum(axis=0)
            table[i, j] = np.max(G / phi)
    best = table.min()
    if not best < C_max:
        raise BoundViolated(f"no trial (M, eta) gives C below {C_max:g} (best {best:.3e})")
    ok = table <= slack * best
    j = int(np.where(ok.any(axis=0))[0].max())
    i = int(np.argmax(ok[:, j]))
    M, eta, C = float(M_grid[i]), float(eta_grid[j]), float(table[i, j])
    parts = bound_summands(speeds, x, t, y, M, eta)
    worst = float(np.max(G / (C * parts.sum(axis=0))))
    template.M, template.C, template.eta = M, C, eta
    return BoundFit(C=C, M=M, eta=eta, worst_ratio=worst, active=np.argmax(parts, axis=0),
                    table=table, M_grid=M_grid, eta_grid=eta_grid)
