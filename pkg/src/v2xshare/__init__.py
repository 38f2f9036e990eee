"""Spectrum sharing in cellular vehicular networks with deep Q-learning agents."""

__version__ = "0.1.0"
