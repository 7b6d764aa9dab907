"""Simulation and verification of critical Gaussian multiplicative chaos."""

__version__ = "0.1.0"
