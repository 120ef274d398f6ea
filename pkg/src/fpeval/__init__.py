"""Fingerprint verification evaluation with random and skilled impostor protocols."""

__version__ = "0.1.0"
