"""Ordinal-regression fragility curves."""
__version__ = "0.1.0"
