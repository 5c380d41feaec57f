"""Optimal transport on the sphere with half squared Euclidean cost."""

from . import constants, convexity, cost, discrete, fields, geometry, grid, solver
from .errors import SphereOtError

__all__ = [
    "constants",
    "convexity",
    "cost",
    "discrete",
    "fields",
    "geometry",
    "grid",
    "solver",
    "SphereOtError",
]

__version__ = "0.1.0"
