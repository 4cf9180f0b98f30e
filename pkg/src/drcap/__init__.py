"""Demand-response capacity estimation from building sensor data."""

__version__ = "0.1.0"
