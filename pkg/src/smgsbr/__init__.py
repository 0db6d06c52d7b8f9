"""Bayesian nonparametric reconstruction of global stable manifolds from time series."""

__version__ = "0.1.0"
