"""Solitary waves of the generalized KdV equation: profiles, spectra, reduced dynamics, PDE runs."""

__version__ = "0.1.0"
