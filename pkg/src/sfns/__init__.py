"""Spectral laboratory for slow-fast coupled fluid dynamics on the 2D torus."""

__version__ = "0.1.0"
