"""Derivative-feedback optimal control of a two-disk magnetic levitation plant."""

__version__ = "0.1.0"
