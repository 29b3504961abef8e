"""Spectral solvers and diagnostics for p-evolution equations with decaying coefficients."""

__version__ = "0.1.0"
