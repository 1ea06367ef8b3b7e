"""Dimensionally reduced echo state network forecasting for hourly wind fields."""

__version__ = "1.0"
