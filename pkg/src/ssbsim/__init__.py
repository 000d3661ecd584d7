"""Simulation toolkit for digitized adiabatic symmetry breaking on XY spin lattices."""

__version__ = "0.1.0"
