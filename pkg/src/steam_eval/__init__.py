"""Doubly robust semi-supervised accuracy estimation under covariate shift."""

__version__ = "0.1.0"
