"""Resampling penalties for histogram model selection."""

__version__ = "0.1.0"
