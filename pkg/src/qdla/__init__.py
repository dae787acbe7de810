"""Quantum double lock-in amplifier simulations: spin probes, CPT probe and a classical baseline."""

__version__ = "0.1.0"
