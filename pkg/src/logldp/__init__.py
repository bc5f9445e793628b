"""Spectral simulation and large-deviation diagnostics for the stochastic heat
equation with logarithmic nonlinearity on an interval."""

from .kernels import BACKEND, HAVE_COMPILED

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAVE_COMPILED", "__version__"]
