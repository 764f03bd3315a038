"""Argument-principle winding numbers and the Evans stability verdict."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .eigen import LinearizedCoefficients, speed_data
from .errors import ZeroOnContour
from .evans import evans_values

MAX_DEPTH = 20
PHASE_STEP = np.pi / 2


@dataclass(frozen=True)
class Contour:
    """Boundary of {Re lam >= sigma0} intersected with the disc |lam| <= R, counterclockwise.

    The curve is parameterized by t in [0, 1]: the arc from the lower corner through R to
    the upper corner, then the vertical segment back down.
    """
    R: float
    sigma0: float = 0.0
    n_nodes: int = 64
    theta1: Optional[float] = None
    theta2: Optional[float] = None

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("contour radius must be positive")
        if abs(self.sigma0) >= self.R:
            raise ValueError("|sigma0| must be smaller than R")
        if self.n_nodes < 16:
            raise ValueError("need at least 16 nodes")

    @property
    def half_angle(self) -> float:
        return float(np.arccos(self.sigma0 / self.R))

    @property
    def arc_fraction(self) -> float:
        arc = 2 * self.half_angle * self.R
        seg = 2 * self.R * np.sin(self.half_angle)
        return arc / (arc + seg)

    def point(self, t):
        t = np.asarray(t, dtype=float) % 1.0
        phi = self.half_angle
        f = self.arc_fraction
        on_arc = t < f
        s_arc = t / f
        s_seg = (t - f) / (1 - f)
        h = self.R * np.sin(phi)
        arc = self.R * np.exp(1j * (-phi + 2 * phi * s_arc))
        seg = self.sigma0 + 1j * h * (1 - 2 * s_seg)
        return np.where(on_arc, arc, seg)

    def params(self) -> np.ndarray:
        """Node parameters; arc and segment each get an even split so R, the corners and sigma0 are nodes."""
        n_arc = max(8, int(round(self.n_nodes * self.arc_fraction / 2)) * 2)
        n_seg = max(8, (self.n_nodes - n_arc) // 2 * 2)
        f = self.arc_fraction
        t_arc = np.linspace(0.0, f, n_arc + 1)
        t_seg = np.linspace(f, 1.0, n_seg + 1)[1:]
        return np.concatenate([t_arc, t_seg])

    @property
    def nodes(self) -> np.ndarray:
        """Closed polyline: the last node repeats the first."""
        return self.point(self.params())

    def in_sector(self, lam) -> np.ndarray:
        if self.theta1 is None:
            return np.ones(np.shape(lam), dtype=bool)
        lam = np.asarray(lam)
        return lam.real >= -self.theta1 - self.theta2 * np.abs(lam.imag)


def build_contour(R: float, sigma0: float = 0.0, n_nodes: int = 64, theta1=None, theta2=None) -> Contour:
    return Contour(R=float(R), sigma0=float(sigma0), n_nodes=int(n_nodes), theta1=theta1, theta2=theta2)


@dataclass
class WindingResult:
    winding: int
    depth: int
    max_step: float
    nodes: int
    suspicious: list = field(default_factory=list)
    raw: float = 0.0


def _phase_steps(D):
    # an exact zero gives inf/nan here; the zero guard reports it afterwards
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.angle(D[1:] / D[:-1])


def winding_of_values(D, zero_guard: float = 1e-12) -> WindingResult:
    """Winding of a closed sampled curve (first value repeated at the end)."""
    D = np.asarray(D, dtype=complex)
    scale = np.max(np.abs(D))
    if np.min(np.abs(D)) <= zero_guard * scale:
        raise ZeroOnContour("|D| below the zero guard at a contour node")
    steps = _phase_steps(D)
    total = steps.sum() / (2 * np.pi)
    return WindingResult(winding=int(round(total)), depth=0, max_step=float(np.max(np.abs(steps))),
                         nodes=D.size, raw=float(total))


def winding_number(evaluator, contour: Optional[Contour] = None, zero_guard: float = 1e-12,
                   max_depth: int = MAX_DEPTH, symmetric: bool = False) -> WindingResult:
    """Winding number of D around ``contour``.

    ``evaluator`` is either a callable mapping an array of lambda to D values, or an
    array of D values at the closed contour nodes (no refinement possible then).
    Segments whose phase increment reaches pi/2 are bisected in the curve parameter,
    up to ``max_depth`` times. With ``symmetric`` only the upper half is evaluated and
    D(conj lam) = conj D(lam) is used.
    """
    if not callable(evaluator):
        return winding_of_values(evaluator, zero_guard)
    t = contour.params()
    if symmetric:
        # upper half runs from lam = R (t = f/2) to lam = sigma0 (t = (1 + f)/2)
        f = contour.arc_fraction
        t = t[(t >= f / 2 - 1e-15) & (t <= (1 + f) / 2 + 1e-15)]
    else:
        t = t[:-1]
    lam = contour.point(t)
    D = np.asarray(evaluator(lam), dtype=complex)
    if not symmetric:
        t = np.append(t, 1.0)
        D = np.append(D, D[0])
    depth = 0
    scale = np.nanmax(np.abs(D))
    while True:
        if np.any(~np.isfinite(D)):
            raise ZeroOnContour("Evans evaluation failed on the contour")
        steps = np.abs(_phase_steps(D))
        bad = np.where(steps >= PHASE_STEP)[0]
        if bad.size == 0 or depth >= max_depth:
            break
        t_new = 0.5 * (t[bad] + t[bad + 1])
        D_new = np.asarray(evaluator(contour.point(t_new)), dtype=complex)
        t = np.insert(t, bad + 1, t_new)
        D = np.insert(D, bad + 1, D_new)
        scale = max(scale, np.nanmax(np.abs(D_new)))
        depth += 1
    absD = np.abs(D)
    if np.min(absD) <= zero_guard * scale:
        raise ZeroOnContour(f"|D| = {np.min(absD):.3e} at lam = {contour.point(t[np.argmin(absD)])}")
    steps = _phase_steps(D)
    if symmetric:
        total = 2 * steps.sum() / (2 * np.pi)
    else:
        total = steps.sum() / (2 * np.pi)
    lam_all = contour.point(t)
    near = np.where(absD < 1e-6 * scale)[0]
    suspicious = [[float(lam_all[i].real), float(lam_all[i].imag), float(absD[i])] for i in near]
    return WindingResult(winding=int(round(total)), depth=depth, max_step=float(np.max(np.abs(steps))),
                         nodes=int(t.size), suspicious=suspicious, raw=float(total))


def default_radius(coeffs: LinearizedCoefficients) -> float:
    a, _, _, _ = speed_data(coeffs)
    bmin = float(np.min(np.linalg.eigvals(coeffs.B_plus).real))
    return 4.0 * max(1.0, float(np.max(a ** 2)) / bmin)


def ray_certificate(evaluator, R: float, angles=(0.0, np.pi / 3, -np.pi / 3), n_points: int = 12,
                    floor: float = 1e-3, min_slope: float = -0.1) -> dict:
    """High-frequency check on |lam| in [R, 4R]: |D| bounded away from 0, no decaying trend."""
    r = np.geomspace(R, 4 * R, n_points)
    rays = []
    ok = True
    for ang in angles:
        D = np.asarray(evaluator(r * np.exp(1j * ang)), dtype=complex)
        mod = np.abs(D)
        if not np.all(np.isfinite(mod)):
            rays.append({"angle": float(ang), "ok": False, "reason": "evaluation failed"})
            ok = False
            continue
        slope = float(np.polyfit(np.log(r), np.log(mod), 1)[0])
        ratio = float(mod.min() / mod.max())
        ray_ok = ratio >= floor and slope >= min_slope
        ok &= ray_ok
        rays.append({"angle": float(ang), "min_abs_D": float(mod.min()), "ratio": ratio,
                     "slope": slope, "ok": bool(ray_ok)})
    return {"ok": bool(ok), "rays": rays, "r_range": [float(R), float(4 * R)]}


@dataclass
class Verdict:
    verdict: str
    winding: Optional[int]
    R: float
    sigma0: float
    nodes: int
    suspicious: list
    certificate: dict
    reason: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @property
    def count(self) -> int:
        return self.winding or 0


def stability_verdict(coeffs: LinearizedCoefficients, R: Optional[float] = None, sigma0: float = 0.0,
                      n_nodes: int = 64, d_hook: Optional[Callable] = None, rtol: float = 1e-10,
                      symmetric: bool = False, retries=(1e-3, -1e-3, 2e-3)) -> Verdict:
    """Decide whether D has zeros in Re lam >= sigma0 (inside radius R plus the ray certificate).

    The winding number counts zeros in the half-disc; beyond R the ray certificate
    stands in for an analytic high-frequency bound. ``d_hook`` multiplies D by a
    known analytic factor (used to plant zeros in tests).
    """
    R = default_radius(coeffs) if R is None else float(R)

    def evaluator(lam):
        return evans_values(coeffs, lam, rtol=rtol, d_hook=d_hook)

    shifts = [0.0] + list(retries)
    result = None
    last_error = ""
    used = sigma0
    for k, shift in enumerate(shifts):
        used = sigma0 + shift
        try:
            result = winding_number(evaluator, build_contour(R, used, n_nodes), symmetric=symmetric)
            break
        except ZeroOnContour as exc:
            last_error = str(exc)
    if result is None:
        return Verdict(verdict="inconclusive", winding=None, R=R, sigma0=used, nodes=n_nodes,
                       suspicious=[], certificate={}, reason=f"zero on contour after {len(retries)} shifts: {last_error}")
    cert = ray_certificate(evaluator, R)
    if result.winding != 0:
        verdict = "unstable"
        reason = f"{result.winding} zero(s) of D in Re lam >= {used:g}, |lam| < {R:g}"
    elif cert["ok"]:
        verdict = "stable_evans"
        reason = ""
    else:
        verdict = "inconclusive"
        reason = "high-frequency ray certificate failed; increase R"
    return Verdict(verdict=verdict, winding=result.winding, R=R, sigma0=used, nodes=result.nodes,
                   suspicious=result.suspicious, certificate=cert, reason=reason)


def planted_zero_hook(zero: complex = 0.3, pole: complex = -1.0):
    """Analytic factor (lam - zero)/(lam - pole) for the planted-zero harness."""
    return lambda lam: (np.asarray(lam) - zero) / (np.asarray(lam) - pole)
