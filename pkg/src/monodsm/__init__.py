"""Regularized Newton iteration for ill-posed equations with monotone operators."""

__version__ = "0.1.0"
