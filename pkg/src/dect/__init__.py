"""Dual-energy CT simulation and Compton/photoelectric reconstruction."""

__version__ = "0.1.0"
