"""Damped Bloch oscillations of cold atoms: lattice, master-equation and grid models."""

__version__ = "0.1.0"
