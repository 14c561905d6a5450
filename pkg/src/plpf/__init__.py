"""Parameterized linear power flow for radial distribution feeders.

The linear model replaces the constant factor 2 of simplified DistFlow with
``2 - alpha_hat`` per branch, where ``alpha_hat`` is a voltage sensitivity
learned from a handful of exact AC solutions by Gaussian-process regression.
"""

from .errors import PlpfError

__version__ = "0.1.0"

__all__ = ["PlpfError", "__version__"]
