"""Cooperative steering-angle regression: ego past frames plus lead-vehicle future frames."""

__version__ = "0.1.0"
