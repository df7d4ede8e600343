"""Stochastic day-ahead optimal power flow for radial feeders with PV and battery storage."""

__version__ = "0.1.0"
