"""Uncertainty-aware optimal-slip estimation for braking on Burckhardt surfaces."""

__version__ = "0.1.0"
