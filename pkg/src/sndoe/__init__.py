"""Stable neural ODEs on Riemannian manifolds."""

__version__ = "0.1.0"
