"""Evans-function stability lab for viscous boundary layers."""
from .errors import EvansLabError
from .model import SystemModel, check_hypotheses, get_builtin, load_model
from .profile import Profile, solve_profile

__version__ = "0.1.0"

__all__ = ["EvansLabError", "SystemModel", "check_hypotheses", "get_builtin", "load_model",
           "Profile", "solve_profile", "__version__"]
