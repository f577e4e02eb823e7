"""Randomized Laplacian sparsification with bootstrap error certificates."""
__version__ = "0.1.0"
