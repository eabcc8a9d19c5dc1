"""Quantized piecewise-linear expanding maps and the entropy of their eigenstates."""

__version__ = "0.1.0"
