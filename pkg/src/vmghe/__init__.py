"""Verifiable multigroup homomorphic encryption (toy parameters)."""

__version__ = "0.1.0"
