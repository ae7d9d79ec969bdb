"""Simulation and verification tools for stochastic degenerate parabolic-hyperbolic equations."""
from .model import ModelSpec, get_model, validate_hypotheses

__all__ = ["ModelSpec", "get_model", "validate_hypotheses"]
__version__ = "0.1.0"
