"""Deterministic discrete-event simulator for composing resilience patterns on a modeled HPC system."""

__version__ = "0.1.0"
