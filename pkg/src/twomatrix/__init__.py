"""Equilibrium problems, biorthogonal kernels and sampling for the quartic two-matrix model."""

__version__ = "0.1.0"
