"""Quasi-Monte-Carlo pricing, greeks and global sensitivity analysis."""

__version__ = "0.1.0"
