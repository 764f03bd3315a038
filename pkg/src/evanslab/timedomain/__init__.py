"""Time-domain Green functions, quarter-plane simulations and decay diagnostics."""
from .bounds import BoundFit, pointwise_bound_fit
from .decay import ZetaCurve, lp_decay_rates, zeta_track
from .duhamel import duhamel_residual, duhamel_terms, duhamel_times
from .ilt import ContourParams, GreenReconstruction, ilt_apply, ilt_green, laplace_invert
from .linear import QuarterPlaneSolution, solve_linearized
from .nonlinear import perturbation_Q, solve_nonlinear
from .templates import BoundTemplate, eval_templates

__all__ = [
    "BoundFit", "BoundTemplate", "ContourParams", "GreenReconstruction", "QuarterPlaneSolution",
    "ZetaCurve", "duhamel_residual", "duhamel_terms", "duhamel_times", "eval_templates",
    "ilt_apply", "ilt_green", "laplace_invert", "lp_decay_rates", "perturbation_Q",
    "pointwise_bound_fit", "solve_linearized", "solve_nonlinear", "zeta_track",
]
