"""Scaling-based non-stationary model of financial index evolution."""

__version__ = "0.1.0"
