"""Optimal control of molecular rotation with Krotov and Lapert-type monotonic algorithms."""

__version__ = "0.1.0"
