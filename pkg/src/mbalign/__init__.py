"""Unsupervised word-embedding alignment on the doubly stochastic manifold."""
__version__ = "0.1.0"
