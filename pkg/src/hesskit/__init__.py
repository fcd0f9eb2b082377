"""Exact and stochastic Hessians for the loss of a miniature transformer."""

__version__ = "0.1.0"
