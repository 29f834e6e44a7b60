"""Propensity-matched DEA treatment-effect estimation."""
__version__ = "0.1.0"
