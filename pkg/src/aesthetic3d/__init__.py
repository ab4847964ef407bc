"""Geometric drivers of 3D shape aesthetics from pairwise preferences."""

__version__ = "0.1.0"
