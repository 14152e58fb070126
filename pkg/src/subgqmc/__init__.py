"""Randomized quasi-Monte Carlo point sets from discrepancy balancing."""

__version__ = "0.1.0"
