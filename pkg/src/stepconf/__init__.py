"""Stepwise confidence attribution for multi-step reasoning traces."""

__version__ = "0.1.0"
