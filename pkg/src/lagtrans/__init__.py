"""Lagrangian particle transport engine on a simulated multi-device
offload runtime."""

__version__ = "0.1.0"
