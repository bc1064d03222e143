"""Wasserstein contraction laboratory for elliptic diffusions."""

__version__ = "0.1.0"
