"""Dual-layer graph motion forecasting toolkit."""

__version__ = "0.1.0"
