"""Quasi-periodic solutions of the discrete nonlinear random Schrodinger equation."""

__version__ = "0.1.0"
