"""Hierarchical prototype learning in the Poincare ball."""

__version__ = "0.1.0"
