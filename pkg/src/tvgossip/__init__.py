"""Accelerated consensus and decentralized optimization over slowly time-varying graphs."""

__version__ = "0.1.0"
