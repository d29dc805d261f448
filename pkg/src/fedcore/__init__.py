"""Federated hierarchical coreset selection simulator."""

__version__ = "0.1.0"
