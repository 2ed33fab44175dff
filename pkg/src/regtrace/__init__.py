"""Execution graphs and ESD differential analysis for driver register logs."""

__version__ = "0.1.0"
