"""Inverse probability for invariant parametric families."""

__version__ = "0.1.0"
