"""Pseudo-spectral simulation and statistical checks for the renormalised stochastic cubic wave equation in 2-d."""
__version__ = "0.1.0"
