"""Distributed evolutionary architecture search for modular autoencoders."""

__version__ = "0.1.0"
