"""Predictive remote control over bandwidth-limited links: simulator and training engine."""

__version__ = "0.1.0"

from .kernels import BACKEND

__all__ = ["BACKEND", "__version__"]
