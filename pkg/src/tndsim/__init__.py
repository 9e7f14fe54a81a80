"""Simulation and estimation toolkit for testing-based study designs."""

__version__ = "0.1.0"
