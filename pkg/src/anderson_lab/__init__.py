"""Finite-volume numerics for localization centers in the Anderson model."""

__version__ = "0.1.0"
