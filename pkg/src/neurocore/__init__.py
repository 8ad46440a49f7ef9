"""Functional and performance simulator for multi-core spiking-network training hardware."""

__version__ = "0.1.0"
