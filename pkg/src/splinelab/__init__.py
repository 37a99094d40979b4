"""Numerical laboratory for Riemannian cubic and time-minimal splines."""

__version__ = "0.1.0"
