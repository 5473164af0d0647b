"""Affective-state features from earnings calls and volatility forecasting."""

__version__ = "0.1.0"
