"""Pointwise decay templates theta, psi1, psi2 and the characteristic indicator chi."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

T_MIN = 1e-6


@dataclass
class BoundTemplate:
    """Templates built from the outflow speeds a_j of the limit state.

    Only outgoing speeds (a_j > 0) contribute to theta and psi1; psi2 lives outside
    the characteristic fan [0, a_n t] with a_n the largest speed.
    """
    speeds: np.ndarray
    L: float = 1.0
    M: Optional[float] = None
    C: Optional[float] = None
    eta: Optional[float] = None

    def __post_init__(self):
        self.speeds = np.sort(np.atleast_1d(np.asarray(self.speeds, dtype=float)))

    @property
    def outgoing(self) -> np.ndarray:
        return self.speeds[self.speeds > 0]

    @property
    def a_n(self) -> float:
        return float(self.speeds[-1])

    @staticmethod
    def _grid(x, t):
        x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
        if np.any(t < T_MIN):
            raise ValueError(f"templates need t >= {T_MIN:g}")
        return x, t

    def chi(self, x, t) -> np.ndarray:
        x, t = self._grid(x, t)
        return ((x >= 0) & (x <= self.a_n * t)).astype(float)

    def theta(self, x, t) -> np.ndarray:
        x, t = self._grid(x, t)
        out = np.zeros(x.shape)
        for a in self.outgoing:
            out += np.exp(-(x - a * t) ** 2 / (self.L * t))
        return out / np.sqrt(1 + t)

    def psi1(self, x, t) -> np.ndarray:
        x, t = self._grid(x, t)
        out = np.zeros(x.shape)
        for a in self.outgoing:
            out += (1 + np.abs(x) + t) ** -0.5 * (1 + np.abs(x - a * t)) ** -0.5
        return self.chi(x, t) * out

    def psi2(self, x, t) -> np.ndarray:
        x, t = self._grid(x, t)
        return (1 - self.chi(x, t)) * (1 + np.abs(x - self.a_n * t) + np.sqrt(t)) ** -1.5

    def total(self, x, t) -> np.ndarray:
        return sum(eval_templates(self, x, t))


def eval_templates(template: BoundTemplate, x, t):
    """(theta, psi1, psi2) at broadcast (x, t)."""
    return template.theta(x, t), template.psi1(x, t), template.psi2(x, t)
