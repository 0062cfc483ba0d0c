"""Fundamentals-driven stock selection with per-stock FNN and ANFIS regressors."""

__version__ = "0.1.0"
