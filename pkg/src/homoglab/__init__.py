"""Numerical laboratory for homogenization of the heat equation with a random potential."""

__version__ = "0.1.0"
