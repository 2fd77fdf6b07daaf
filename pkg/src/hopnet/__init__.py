"""Learned rigid-body collision dynamics on combinatorial complexes."""

__version__ = "0.1.0"
