"""Decoupled linearised finite elements for the spin-diffusion Landau-Lifshitz-Bloch system."""

__version__ = "0.1.0"
