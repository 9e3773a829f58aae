"""Planar push simulation and mass/friction identification over cell grids."""

__version__ = "0.1.0"
