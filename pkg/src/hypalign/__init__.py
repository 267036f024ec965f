"""Hyperbolic and Euclidean graph networks with geometry-task alignment analysis."""

__version__ = "0.1.0"
