"""Guaranteed energy-norm error bounds for linear elasticity via equilibrated tractions."""

__version__ = "0.1.0"
