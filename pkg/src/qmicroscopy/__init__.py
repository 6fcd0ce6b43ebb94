"""Quantum-enhanced polarized-light microscopy with binary-outcome photon counting."""

__version__ = "0.1.0"
