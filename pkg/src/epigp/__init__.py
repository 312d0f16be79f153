"""Gaussian-process forecasting of epidemic log-difference series with error bounds."""

__version__ = "0.1.0"
