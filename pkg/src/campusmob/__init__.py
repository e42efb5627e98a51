"""Deterministic simulation of campus commuting modes: everyone drives, ridesharing and shuttle pooling."""

__version__ = "0.1.0"
