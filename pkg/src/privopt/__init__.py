"""Differentially private stochastic optimization for generalized linear,
smooth nonconvex and weakly convex losses over l_p geometries."""

from . import data, evaluation, geometry, losses, privacy, solvers

__version__ = "0.1.0"

__all__ = ["data", "evaluation", "geometry", "losses", "privacy", "solvers", "__version__"]
