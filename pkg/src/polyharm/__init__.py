"""Discrete harmonic maps from admissible polyhedral domains into CAT(1) targets."""

__version__ = "0.1.0"
