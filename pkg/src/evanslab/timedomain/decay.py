"""Weighted sup-norm tracking and algebraic L^p decay rates of simulated perturbations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientDecade
from .linear import QuarterPlaneSolution
from .templates import T_MIN, BoundTemplate


@dataclass
class ZetaCurve:
    t: np.ndarray
    zeta: np.ndarray         # running sup, nondecreasing
    snapshot: np.ndarray     # sup over y at each sample alone

    @property
    def sup(self) -> float:
        return float(self.zeta[-1]) if self.zeta.size else 0.0

    def flat_tail(self, fraction: float = 0.5, rel: float = 0.05) -> bool:
        """True when zeta grows by less than ``rel`` over the last ``fraction`` of samples."""
        if self.zeta.size < 2 or self.sup == 0:
            return True
        k = int((1 - fraction) * self.zeta.size)
        return bool(self.zeta[-1] <= (1 + rel) * self.zeta[k])


def zeta_track(solution: QuarterPlaneSolution, template: BoundTemplate, t_min: float = T_MIN) -> ZetaCurve:
    """Running sup over grid points and past samples of |u(y,s)| / (theta + psi1 + psi2)(y,s)."""
    keep = solution.t >= t_min
    t = solution.t[keep]
    u = np.linalg.norm(solution.perturbation[keep], axis=-1)          # (T, X)
    X, Tm = np.meshgrid(solution.x, t)
    w = template.total(X, Tm)
    snap = np.max(u / w, axis=1) if t.size else np.zeros(0)
    return ZetaCurve(t=t, zeta=np.maximum.accumulate(snap) if t.size else snap, snapshot=snap)


def lp_decay_rates(solution: QuarterPlaneSolution, p_list=(1, 2, np.inf), t_transient: float = 1.0,
                   min_decades: float = 1.5) -> dict:
    """Least-squares slope of log ||u||_p against log(1 + t) over the final decade of samples."""
    t = solution.t
    t_end = float(t[-1])
    span = np.log10((1 + t_end) / (1 + t_transient))
    if span < min_decades:
        raise InsufficientDecade(f"run covers {span:.2f} decades past t = {t_transient:g}; need {min_decades}")
    sel = (t >= t_end / 10) & (t >= t_transient)
    if np.count_nonzero(sel) < 3:
        raise InsufficientDecade("fewer than 3 samples in the final decade")
    rates = {}
    for p in p_list:
        norms = solution.norms(p)[sel]
        tiny = np.finfo(float).tiny
        rates[p] = float(np.polyfit(np.log1p(t[sel]), np.log(np.maximum(norms, tiny)), 1)[0])
    return rates
