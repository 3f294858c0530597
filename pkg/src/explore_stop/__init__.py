"""Entropy-regularized optimal stopping: PDE solvers, TD policy iteration and evaluation."""

__version__ = "0.1.0"
