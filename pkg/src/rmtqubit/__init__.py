"""Qubit decoherence in random-matrix environments."""

__version__ = "0.1.0"
