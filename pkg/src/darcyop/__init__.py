"""Finite-volume Darcy flow simulation and discrete neural operator surrogates."""

__version__ = "0.1.0"
