"""JSON scenarios for perturbation runs: data classes g(x), h(t) of size E0."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


def make_g(spec, E0: float, n: int) -> Optional[Callable]:
    """Initial perturbation; every type satisfies |g(x)| <= C E0 (1 + x)^{-3/2}."""
    if spec in (None, "zero") or (isinstance(spec, dict) and spec.get("type") == "zero"):
        return None
    spec = {"type": spec} if isinstance(spec, str) else dict(spec)
    kind = spec.get("type")
    direction = np.asarray(spec.get("direction", np.ones(n)), dtype=float).reshape(n)
    if kind == "gaussian":
        c, w = float(spec.get("center", 3.0)), float(spec.get("width", 1.0))
        return lambda x: E0 * np.exp(-((np.asarray(x) - c) / w) ** 2)[:, None] * direction
    if kind == "algebraic":
        return lambda x: (E0 * (1 + np.asarray(x)) ** -1.5)[:, None] * direction
    raise ValueError(f"unknown g type {kind!r}")


def make_h(spec, E0: float, n: int) -> Optional[Callable]:
    """Boundary perturbation with |h| <= E0 (1+t)^{-3/2} and |h'| <= C E0 (1+t)^{-1}."""
    if spec in (None, "zero") or (isinstance(spec, dict) and spec.get("type") == "zero"):
        return None
    spec = {"type": spec} if isinstance(spec, str) else dict(spec)
    kind = spec.get("type")
    direction = np.asarray(spec.get("direction", np.ones(n)), dtype=float).reshape(n)
    if kind == "algebraic":
        return lambda t: (E0 * (1 + np.atleast_1d(t)) ** -1.5)[:, None] * direction
    if kind == "ramp":
        return lambda t: (E0 * np.atleast_1d(t) * (1 + np.atleast_1d(t)) ** -2.5)[:, None] * direction
    raise ValueError(f"unknown h type {kind!r}")


@dataclass
class Scenario:
    model: object
    T: float = 200.0
    E0: float = 0.01
    g: object = None
    h: object = None
    profile: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    n_out: int = 60

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        pert = doc.get("perturbation", {})
        return cls(model=doc["model"], T=float(doc.get("T", 200.0)), E0=float(pert.get("E0", 0.01)),
                   g=pert.get("g"), h=pert.get("h"), profile=dict(doc.get("profile") or {}),
                   grid=dict(doc.get("grid") or {}), n_out=int(doc.get("n_out", 60)))

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def times(self) -> np.ndarray:
        return np.unique(np.r_[0.0, np.geomspace(min(0.1, self.T), self.T, self.n_out)])
