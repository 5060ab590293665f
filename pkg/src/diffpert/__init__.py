"""Singular perturbation analysis with differential forms and Lie derivatives."""

__version__ = "0.1.0"
