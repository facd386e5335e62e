"""Stochastic variational integrators for mechanical systems on vector
spaces, SO(3) and products of rigid bodies, with the analysis tools used to
check them (symplecticity, momentum maps, strong order, thermal behaviour)."""

__version__ = "0.1.0"

from . import analysis, geometry, integrators, noise, systems  # noqa: E402,F401
from .errors import *  # noqa: E402,F401,F403
