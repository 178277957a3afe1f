"""Accelerated half-quadratic-splitting unfolding networks for CS-MRI."""

__version__ = "0.1.0"
