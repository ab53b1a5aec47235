"""Iterative hard thresholding for sparsity-constrained ERM, with stability
diagnostics and a reproducible simulation harness."""

__version__ = "0.1.0"
