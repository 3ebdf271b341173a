"""Spectral simulation and ergodic statistics for a stochastic Allen-Cahn equation
driven by subordinated cylindrical noise on the one-dimensional torus."""

__version__ = "0.1.0"
